#![no_main]

use libfuzzer_sys::fuzz_target;
use stsm_core::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = decode(data) else {
        return;
    };
    let bytes = encode(&ckpt);
    let again = decode(&bytes).expect("re-decode");
    assert_eq!(encode(&again), bytes);
});
