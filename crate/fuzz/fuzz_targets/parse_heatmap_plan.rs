#![no_main]

use libfuzzer_sys::fuzz_target;
use lindex::bench::HeatmapPlan;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = HeatmapPlan::from_toml(text);
    }
});
