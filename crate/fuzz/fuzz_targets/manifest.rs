#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use wholebody_core::dataset::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let m = Manifest::parse(text, Path::new("/corpus"));
    assert!(m.paths.iter().all(|p| p.is_absolute()));
});
