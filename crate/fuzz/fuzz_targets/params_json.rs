#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(params) = famscale_cli::parse_params_json(text) {
            assert!(params.to_log().iter().all(|v| v.is_finite()));
        }
    }
});
