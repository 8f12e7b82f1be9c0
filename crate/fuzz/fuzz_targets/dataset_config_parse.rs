#![no_main]

use fmrme_core::config::DatasetConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = DatasetConfig::from_toml_str(text) {
            let again = DatasetConfig::from_toml_str(&cfg.to_toml_string()).expect("serialized config parses");
            assert_eq!(again.fingerprint(), cfg.fingerprint());
        }
    }
});
