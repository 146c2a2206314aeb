#![no_main]

use libfuzzer_sys::fuzz_target;
use ttpredict::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let _ = cfg.validate();
    }
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        let _ = cfg.validate();
    }
});
