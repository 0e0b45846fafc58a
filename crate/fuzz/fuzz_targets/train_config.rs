#![no_main]

use libfuzzer_sys::fuzz_target;
use qdiff::train::TrainConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = TrainConfig::from_toml(text) {
        let out = cfg.to_toml().unwrap();
        let again = TrainConfig::from_toml(&out).expect("serialized config reparses");
        assert_eq!(again.to_toml().unwrap(), out);
    }
});
