#![no_main]

use libfuzzer_sys::fuzz_target;
use pqcrit::config::KeyValueConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = KeyValueConfig::parse(text) {
            let again = KeyValueConfig::parse(&cfg.to_text()).expect("written config parses");
            assert_eq!(again, cfg);
        }
    }
});
