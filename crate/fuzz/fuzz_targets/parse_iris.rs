#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(raw) = std::str::from_utf8(data) {
        if seqvi::data::parse_iris(raw).is_ok() {
            let _ = seqvi::data::load_iris_2d(raw, 0);
        }
    }
});
