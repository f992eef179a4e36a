#![no_main]

use libfuzzer_sys::fuzz_target;
use vager_core::eval::report::{parse_report_json, report_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(report) = parse_report_json(text) {
        let again = parse_report_json(&report_json(&report)).expect("written report parses");
        assert_eq!(report, again);
    }
});
