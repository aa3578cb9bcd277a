#![no_main]

use libfuzzer_sys::fuzz_target;
use lindex::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::parse_bytes(data) {
        // Parsed datasets must uphold their own invariants.
        assert!(!ds.is_empty());
        assert!(ds.keys().windows(2).all(|w| w[0] < w[1]));
    }
});
