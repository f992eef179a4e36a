#![no_main]

use libfuzzer_sys::fuzz_target;
use vager_core::data::FeatureSet;

fuzz_target!(|data: &[u8]| {
    if let Ok(fs) = FeatureSet::from_csv(data) {
        let again = FeatureSet::from_csv(&fs.to_csv()).expect("written CSV parses");
        assert_eq!(fs, again);
    }
});
