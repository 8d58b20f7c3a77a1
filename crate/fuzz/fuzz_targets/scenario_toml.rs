#![no_main]

use dermpc::scenario::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_toml_str(text) {
        // anything accepted must survive a round trip unchanged
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).expect("re-parse");
        assert_eq!(cfg, again);
    }
});
