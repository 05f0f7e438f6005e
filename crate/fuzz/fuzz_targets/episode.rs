#![no_main]

use libfuzzer_sys::fuzz_target;
use wholebody_core::dataset::{decode_episode, encode_episode};

fuzz_target!(|data: &[u8]| {
    if let Ok(ep) = decode_episode(data) {
        assert_eq!(decode_episode(&encode_episode(&ep).unwrap()).unwrap(), ep);
    }
});
