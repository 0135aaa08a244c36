#![no_main]

use grapheneseg::imagecore::{decode_mask_png, encode_mask_png};
use grapheneseg::NUM_CLASSES;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_mask_png(data) {
        assert!(mask.as_raw().iter().all(|&k| (k as usize) < NUM_CLASSES));
        let png = encode_mask_png(&mask).expect("decoded mask encodes");
        assert_eq!(decode_mask_png(&png).expect("re-decodes"), mask);
    }
});
