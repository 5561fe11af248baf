#![no_main]

use libfuzzer_sys::fuzz_target;
use specact_cli::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Err(e) = parse_config(text, None) {
            assert!(!e.message.is_empty());
        }
    }
});
