#![no_main]

use libfuzzer_sys::fuzz_target;
use unea::config::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::from_kv_text(text, "config") {
        let back = TrainConfig::from_kv_text(&cfg.to_kv_text(), "config").unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }
});
