#![no_main]

use std::path::Path;

use leaveout::simulate::parse_scenario_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_scenario_config(text, Path::new("/nonexistent"));
    }
});
