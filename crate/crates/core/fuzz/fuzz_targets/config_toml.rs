#![no_main]

use libfuzzer_sys::fuzz_target;
use limbrec::models::ArchKind;
use limbrec::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::from_toml(text) {
        for kind in ArchKind::ALL {
            let _ = cfg.model_spec(kind).validate();
        }
        let _ = cfg.activities();
    }
});
