//! Decoding is bounded by the decoder's memory limit; accepted images must
//! re-encode to the same pixels.

#![no_main]

use grapheneseg::imagecore::{decode_image_png, encode_image_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image_png(data) {
        let png = encode_image_png(&img).expect("decoded image encodes");
        assert_eq!(decode_image_png(&png).expect("re-decodes"), img);
    }
});
