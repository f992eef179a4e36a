#![no_main]

use libfuzzer_sys::fuzz_target;
use vager_core::data::FeatureSet;

fuzz_target!(|data: &[u8]| {
    if let Ok(fs) = FeatureSet::from_binary(data) {
        assert_eq!(fs.to_binary(), data);
    }
});
