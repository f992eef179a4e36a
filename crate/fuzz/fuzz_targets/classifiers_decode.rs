#![no_main]

use libfuzzer_sys::fuzz_target;
use vager_core::persist::{decode_classifiers, encode_classifiers};

fuzz_target!(|data: &[u8]| {
    if let Ok(classifiers) = decode_classifiers(data) {
        assert_eq!(encode_classifiers(&classifiers), data);
    }
});
