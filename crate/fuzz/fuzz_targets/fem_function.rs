#![no_main]

use libfuzzer_sys::fuzz_target;
use pqcrit::fem::parse_fem_function;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(f) = parse_fem_function(text) {
            assert!(f.coeffs.iter().all(|x| x.is_finite()));
        }
    }
});
