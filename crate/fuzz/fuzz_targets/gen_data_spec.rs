#![no_main]

use dermpc::data::GenDataSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mut spec) = GenDataSpec::from_toml_str(text) {
        // keep generation cheap; validation already ran on the full spec
        spec.days = spec.days.min(2);
        let out = spec.generate();
        assert!(out.pv.values.iter().all(|v| *v <= 0.0));
        assert!(out.load.values.iter().all(|v| v.is_finite()));
    }
});
