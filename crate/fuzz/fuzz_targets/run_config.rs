#![no_main]

use libfuzzer_sys::fuzz_target;
use nmsparse::io::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::from_json(text) {
            // a validated config survives its own serialization
            assert_eq!(RunConfig::from_json(&config.to_json()).ok(), Some(config));
        }
    }
});
