#![no_main]

use grapheneseg::config::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = PipelineConfig::from_toml_str(text) {
        // a validated config written back out is still valid
        let back = PipelineConfig::from_toml_str(&cfg.to_toml()).expect("written config parses");
        assert_eq!(back, cfg);
    }
});
