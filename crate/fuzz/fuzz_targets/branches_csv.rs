#![no_main]

use famscale::dataset::{parse_branches, Format};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Lenient parsing must never panic, and every accepted record must be valid.
    if let Ok(outcome) = parse_branches(data, Format::Csv) {
        for record in &outcome.records {
            assert!(record.validate().is_ok());
        }
        for rejection in &outcome.rejections {
            assert!(rejection.row >= 1);
        }
    }
});
