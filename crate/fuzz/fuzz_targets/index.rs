#![no_main]

use libfuzzer_sys::fuzz_target;
use wholebody_core::vinn::VinnPolicy;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = VinnPolicy::decode_file(data) {
        let bytes = p.encode_file();
        assert_eq!(VinnPolicy::decode_file(&bytes).unwrap().encode_file(), bytes);
    }
});
