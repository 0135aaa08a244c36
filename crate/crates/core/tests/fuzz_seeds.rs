//! Replays the checked-in fuzz corpus through the parsers. Seeds named
//! `ok-*` must be accepted and `bad-*` rejected; accepted inputs must
//! survive a write/read cycle, as the fuzz targets assert.

use std::path::PathBuf;

use grapheneseg::config::PipelineConfig;
use grapheneseg::imagecore::{decode_image_png, decode_mask_png, encode_image_png, encode_mask_png};
use grapheneseg::segmath::PixelClassifier;
use grapheneseg::{DatasetManifest, NUM_CLASSES};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(
        out.iter().any(|(n, _)| n.starts_with("ok-")),
        "{target} has no accepted seed"
    );
    assert!(
        out.iter().any(|(n, _)| n.starts_with("bad-")),
        "{target} has no rejected seed"
    );
    out
}

fn check<T>(target: &str, parse: impl Fn(&[u8]) -> Option<T>, round_trip: impl Fn(&T)) {
    for (name, bytes) in seeds(target) {
        let parsed = parse(&bytes);
        assert_eq!(parsed.is_some(), name.starts_with("ok-"), "{target}/{name}");
        if let Some(v) = parsed {
            round_trip(&v);
        }
    }
}

fn text(bytes: &[u8]) -> Option<&str> {
    std::str::from_utf8(bytes).ok()
}

#[test]
fn manifest_seeds() {
    check(
        "manifest_jsonl",
        |b| DatasetManifest::parse(text(b)?).ok(),
        |m| assert_eq!(&DatasetManifest::parse(&m.to_jsonl()).unwrap(), m),
    );
}

#[test]
fn config_seeds() {
    check(
        "config_toml",
        |b| PipelineConfig::from_toml_str(text(b)?).ok(),
        |c| assert_eq!(&PipelineConfig::from_toml_str(&c.to_toml()).unwrap(), c),
    );
}

#[test]
fn image_seeds() {
    check(
        "image_png",
        |b| decode_image_png(b).ok(),
        |img| assert_eq!(&decode_image_png(&encode_image_png(img).unwrap()).unwrap(), img),
    );
}

#[test]
fn mask_seeds() {
    check(
        "mask_png",
        |b| decode_mask_png(b).ok(),
        |m| {
            assert!(m.as_raw().iter().all(|&k| (k as usize) < NUM_CLASSES));
            assert_eq!(&decode_mask_png(&encode_mask_png(m).unwrap()).unwrap(), m);
        },
    );
}

#[test]
fn model_seeds() {
    check(
        "model_json",
        |b| PixelClassifier::from_json(text(b)?).ok(),
        |m| assert_eq!(&PixelClassifier::from_json(&m.to_json()).unwrap(), m),
    );
}
