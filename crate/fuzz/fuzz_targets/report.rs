#![no_main]

use libfuzzer_sys::fuzz_target;
use wholebody_core::bench::Report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = Report::parse(text) {
        let _ = r.column("kind");
        let _ = r.result("order");
    }
});
