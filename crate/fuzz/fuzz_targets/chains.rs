#![no_main]

use libfuzzer_sys::fuzz_target;
use salmon_lcm::dataio::{decode_chains, encode_chains};

fuzz_target!(|data: &[u8]| {
    if let Ok(out) = decode_chains("fuzz", data) {
        let bytes = encode_chains(&out);
        let again = decode_chains("fuzz", &bytes).expect("re-encoded chains decode");
        assert_eq!(encode_chains(&again), bytes);
    }
});
