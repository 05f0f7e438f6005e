#![no_main]

use libfuzzer_sys::fuzz_target;
use wholebody_core::bench::{BenchConfig, DriftConfig};
use wholebody_core::config::{ConfigKeys, KeyValues};
use wholebody_core::vinn::RetrievalConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(kv) = KeyValues::parse(text) else { return };
    if let Ok(c) = BenchConfig::from_kv(&kv) {
        let _ = c.validate();
    }
    if let Ok(c) = DriftConfig::from_kv(&kv) {
        let _ = c.validate();
    }
    if let Ok(c) = RetrievalConfig::from_kv(&kv) {
        let _ = c.validate();
    }
});
