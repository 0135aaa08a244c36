#![no_main]

use grapheneseg::segmath::PixelClassifier;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = PixelClassifier::from_json(text) {
        model.validate().expect("loaded models are valid");
        let back = PixelClassifier::from_json(&model.to_json()).expect("written model loads");
        assert_eq!(back, model);
    }
});
