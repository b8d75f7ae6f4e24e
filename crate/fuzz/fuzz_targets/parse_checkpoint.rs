#![no_main]

use libfuzzer_sys::fuzz_target;
use seqvi::checkpoint::parse_checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_checkpoint(raw) {
        let again = parse_checkpoint(&c.to_text()).expect("written checkpoint must parse");
        assert_eq!(again.to_text(), c.to_text());
    }
});
