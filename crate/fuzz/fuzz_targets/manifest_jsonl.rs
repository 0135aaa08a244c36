//! Manifest parsing must never panic, and anything it accepts must survive
//! a write/read cycle unchanged.

#![no_main]

use grapheneseg::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = DatasetManifest::parse(text) {
        let again = DatasetManifest::parse(&m.to_jsonl()).expect("written manifest parses");
        assert_eq!(again, m);
    }
});
