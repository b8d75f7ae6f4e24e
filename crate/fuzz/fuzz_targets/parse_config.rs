#![no_main]

use libfuzzer_sys::fuzz_target;
use seqvi::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(raw) {
        let again = parse_config(&cfg.to_toml()).expect("written config must parse");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
});
