#![no_main]

use dermpc::data::parse_series_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for column in ["kw", "price"] {
        if let Ok(s) = parse_series_csv(data, column) {
            assert!(s.values.len() >= 2);
            assert!(s.values.iter().all(|v| v.is_finite()));
            assert!(s.step_minutes > 0);
        }
    }
});
