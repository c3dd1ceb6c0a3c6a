#![no_main]

use libfuzzer_sys::fuzz_target;
use pqcrit::eigen::parse_eigen_sequence;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_eigen_sequence(text);
    }
});
