//! Synthetic micrographs with exact masks.
//!
//! Each image is a flat substrate tint with convex "flakes" whose colour is
//! the tint shifted by a per-class (Y, Cb, Cr) offset. Thicker classes are
//! darker. Flakes are drawn in ascending class order, so thicker material
//! covers thinner material where they overlap. Optional artifacts follow in
//! camera order: radial vignetting, exposure gain, sensor noise, clipping.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasetops::{class_weights, dataset_stats, ClassWeights};
use crate::error::{Error, Result};
use crate::imagecore::{load_mask, save_image, save_mask, to_u8, Image, LabelMask, NUM_CLASSES};
use crate::manifest::{DatasetManifest, Record};
use crate::rng::stream;

/// Mean class weights of the reference dataset.
pub const DEFAULT_PROFILE: [f64; NUM_CLASSES] = [0.92, 0.006, 0.018, 0.007, 0.007, 0.005, 0.038];

/// Share of images containing each class 1..=6 in the reference dataset.
pub const DEFAULT_PRESENCE: [f64; NUM_CLASSES - 1] = [0.2437, 0.4449, 0.4485, 0.3824, 0.2096, 0.4816];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_images: usize,
    pub width: usize,
    pub height: usize,
    /// Substrate tints in RGB; each image draws one uniformly.
    pub backgrounds: Vec<[u8; 3]>,
    /// (dY, dCb, dCr) added to the tint for classes 1..=6.
    pub class_offsets: [[f64; 3]; NUM_CLASSES - 1],
    /// Minimum Euclidean distance between any two offsets, background's
    /// zero offset included.
    pub contrast_margin: f64,
    /// Target mean class weights, background first.
    pub class_profile: [f64; NUM_CLASSES],
    /// Probability that an image contains class k (1..=6).
    pub class_presence: [f64; NUM_CLASSES - 1],
    /// Polygons per present class, inclusive range.
    pub flakes_per_class: (usize, usize),
    /// Vertex count range of each polygon.
    pub vertices: (usize, usize),
    pub overexposure_fraction: f64,
    /// Multiplicative exposure of overexposed images, applied before clipping.
    pub overexposure_gain: f64,
    /// Brightness loss at the far corner; 0 disables vignetting.
    pub vignetting: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 200,
            width: 256,
            height: 256,
            backgrounds: vec![[185, 165, 205], [205, 175, 120]],
            class_offsets: [
                [-10.0, 3.0, -2.0],
                [-20.0, 5.0, -4.0],
                [-30.0, 7.0, -6.0],
                [-45.0, 9.0, -9.0],
                [-65.0, 11.0, -12.0],
                [-95.0, 14.0, -16.0],
            ],
            contrast_margin: 8.0,
            class_profile: DEFAULT_PROFILE,
            class_presence: DEFAULT_PRESENCE,
            flakes_per_class: (1, 2),
            vertices: (5, 9),
            overexposure_fraction: 0.3,
            overexposure_gain: 1.35,
            vignetting: 0.05,
            noise_sigma: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.width < 3 || self.height < 3 {
            return bad("images must be at least 3x3".into());
        }
        if self.backgrounds.is_empty() {
            return bad("at least one background tint is required".into());
        }
        let sum: f64 = self.class_profile.iter().sum();
        if (sum - 1.0).abs() > 0.01 || self.class_profile.iter().any(|&p| !(p >= 0.0)) {
            return bad(format!(
                "class profile must be non-negative and sum to 1, sums to {sum}"
            ));
        }
        if self.class_presence.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return bad("presence probabilities must lie in [0, 1]".into());
        }
        for k in 0..NUM_CLASSES - 1 {
            if self.class_profile[k + 1] > 0.0 && self.class_presence[k] == 0.0 {
                return bad(format!("class {} has area but never appears", k + 1));
            }
        }
        let (lo, hi) = self.flakes_per_class;
        if lo == 0 || lo > hi {
            return bad("flakes_per_class must be a non-empty range starting at 1 or more".into());
        }
        if self.vertices.0 < 3 || self.vertices.0 > self.vertices.1 {
            return bad("polygons need at least 3 vertices".into());
        }
        if !(0.0..=1.0).contains(&self.overexposure_fraction) || !(self.overexposure_gain >= 1.0) {
            return bad("overexposure needs a fraction in [0, 1] and a gain of at least 1".into());
        }
        if !(0.0..1.0).contains(&self.vignetting) || !(self.noise_sigma >= 0.0) {
            return bad("vignetting must lie in [0, 1) and noise must be non-negative".into());
        }
        let mut offsets = vec![[0.0; 3]];
        offsets.extend(self.class_offsets);
        for i in 0..offsets.len() {
            for j in i + 1..offsets.len() {
                let d = offsets[i]
                    .iter()
                    .zip(&offsets[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < self.contrast_margin {
                    return bad(format!(
                        "classes {i} and {j} differ by {d:.2}, below the contrast margin {}",
                        self.contrast_margin
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: Image,
    pub mask: LabelMask,
    /// Index into `backgrounds`.
    pub background: usize,
    pub overexposed: bool,
}

fn ycbcr_to_rgb_f([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    [y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb]
}

fn rgb_to_ycbcr_f([r, g, b]: [f64; 3]) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b,
    ]
}

/// Counter-clockwise convex polygon.
#[derive(Debug, Clone)]
struct Polygon(Vec<[f64; 2]>);

impl Polygon {
    fn area(&self) -> f64 {
        let n = self.0.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.0[i], self.0[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.0.len();
        (0..n).all(|i| {
            let (a, b) = (self.0[i], self.0[(i + 1) % n]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
        })
    }

    fn bounds(&self) -> [f64; 4] {
        self.0.iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
        )
    }
}

/// Random convex polygon of the given area: points on a circle at sorted
/// angles, stretched and rotated (an affine map keeps convexity).
fn random_polygon<R: Rng + ?Sized>(rng: &mut R, center: [f64; 2], area: f64, vertices: usize) -> Polygon {
    let mut angles: Vec<f64> = (0..vertices).map(|_| rng.random_range(0.0..TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let stretch = rng.random_range(0.6..1.0);
    let rot = rng.random_range(0.0..PI);
    let (s, c) = rot.sin_cos();
    let mut poly = Polygon(
        angles
            .iter()
            .map(|t| {
                let (x, y) = (t.cos(), t.sin() * stretch);
                [x * c - y * s, x * s + y * c]
            })
            .collect(),
    );
    let a = poly.area();
    let scale = if a > 1e-9 { (area / a).sqrt() } else { 0.0 };
    for p in &mut poly.0 {
        *p = [center[0] + p[0] * scale, center[1] + p[1] * scale];
    }
    poly
}

fn render<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SynthSample> {
    let (w, h) = (cfg.width, cfg.height);
    let background = rng.random_range(0..cfg.backgrounds.len());
    let overexposed = rng.random::<f64>() < cfg.overexposure_fraction;
    let mut labels = vec![0u8; w * h];
    let pixels = (w * h) as f64;
    for k in 1..NUM_CLASSES {
        let presence = cfg.class_presence[k - 1];
        if rng.random::<f64>() >= presence {
            continue;
        }
        // mean area when present, so the expected share matches the profile
        let target = cfg.class_profile[k] / presence * pixels * rng.random_range(0.5..1.5);
        let count = rng.random_range(cfg.flakes_per_class.0..=cfg.flakes_per_class.1);
        for _ in 0..count {
            let center = [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)];
            let vertices = rng.random_range(cfg.vertices.0..=cfg.vertices.1);
            let poly = random_polygon(rng, center, target / count as f64, vertices);
            let [x0, y0, x1, y1] = poly.bounds();
            let xs = (x0.floor().max(0.0) as usize)..(x1.ceil().min(w as f64) as usize);
            let ys = (y0.floor().max(0.0) as usize)..(y1.ceil().min(h as f64) as usize);
            for y in ys {
                for x in xs.clone() {
                    if poly.contains([x as f64 + 0.5, y as f64 + 0.5]) {
                        labels[y * w + x] = k as u8;
                    }
                }
            }
        }
    }

    let tint = rgb_to_ycbcr_f(cfg.backgrounds[background].map(f64::from));
    let colours: Vec<[f64; 3]> = (0..NUM_CLASSES)
        .map(|k| {
            let off = if k == 0 { [0.0; 3] } else { cfg.class_offsets[k - 1] };
            ycbcr_to_rgb_f([tint[0] + off[0], tint[1] + off[1], tint[2] + off[2]])
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(format!("synth: {e}")))?;
    let gain = if overexposed { cfg.overexposure_gain } else { 1.0 };
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let r2max = cx * cx + cy * cy;
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let shade = gain * (1.0 - cfg.vignetting * (dx * dx + dy * dy) / r2max);
            for v in colours[labels[y * w + x] as usize] {
                let n = if cfg.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                data.push(to_u8(v * shade + n));
            }
        }
    }
    Ok(SynthSample {
        image: Image::new(w, h, data)?,
        mask: LabelMask::new(w, h, labels)?,
        background,
        overexposed,
    })
}

/// Renders image `index` of the corpus; independent of every other index.
pub fn generate_one(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    cfg.validate()?;
    render(cfg, &mut stream(cfg.seed, &[0x7379, index as u64]))
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    (0..cfg.n_images)
        .into_par_iter()
        .map(|i| render(cfg, &mut stream(cfg.seed, &[0x7379, i as u64])))
        .collect()
}

pub fn image_name(i: usize) -> String {
    format!("images/{i:05}.png")
}

pub fn mask_name(i: usize) -> String {
    format!("masks/{i:05}.png")
}

/// Writes `images/`, `masks/` and `manifest.jsonl` under `dir`.
pub fn write_corpus(cfg: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    (0..cfg.n_images).into_par_iter().try_for_each(|i| {
        let s = generate_one(cfg, i)?;
        save_image(&s.image, dir.join(image_name(i)))?;
        save_mask(&s.mask, dir.join(mask_name(i)))
    })?;
    let records = (0..cfg.n_images)
        .map(|i| Record::new(image_name(i), Some(mask_name(i))))
        .collect();
    let manifest = DatasetManifest::new(records)?.with_base_dir(dir);
    manifest.save(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// True when every mean class weight is within `tol` of the target.
pub fn profile_matches(weights: &[ClassWeights], target: &[f64; NUM_CLASSES], tol: f64) -> Result<bool> {
    let stats = dataset_stats(weights)?;
    let mean = stats.mean_weights();
    Ok((0..NUM_CLASSES).all(|k| (mean.get(k) - target[k]).abs() <= tol))
}

pub fn corpus_stats_match(manifest: &DatasetManifest, target: &[f64; NUM_CLASSES], tol: f64) -> Result<bool> {
    let weights = (0..manifest.len())
        .into_par_iter()
        .map(|i| Ok(class_weights(&load_mask(manifest.mask_path(i)?)?)))
        .collect::<Result<Vec<_>>>()?;
    profile_matches(&weights, target, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain() -> SynthConfig {
        SynthConfig {
            n_images: 3,
            width: 32,
            height: 24,
            class_presence: [0.0; 6],
            class_profile: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            overexposure_fraction: 0.0,
            vignetting: 0.0,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn empty_corpus() {
        let cfg = SynthConfig {
            n_images: 0,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).unwrap().is_empty());
    }

    #[test]
    fn noiseless_flakeless_is_flat_tint() {
        for s in generate(&plain()).unwrap() {
            let tint = plain().backgrounds[s.background];
            assert!(s.image.pixels().all(|p| p == tint));
            assert!(s.mask.as_raw().iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn flake_pixels_carry_their_offset() {
        let cfg = SynthConfig {
            n_images: 4,
            width: 64,
            height: 64,
            overexposure_fraction: 0.0,
            vignetting: 0.0,
            noise_sigma: 0.0,
            class_presence: [1.0; 6],
            ..SynthConfig::default()
        };
        for s in generate(&cfg).unwrap() {
            let tint = rgb_to_ycbcr_f(cfg.backgrounds[s.background].map(f64::from));
            for (p, &k) in s.image.pixels().zip(s.mask.as_raw()) {
                let off = if k == 0 {
                    [0.0; 3]
                } else {
                    cfg.class_offsets[k as usize - 1]
                };
                let want = ycbcr_to_rgb_f([tint[0] + off[0], tint[1] + off[1], tint[2] + off[2]]).map(to_u8);
                assert_eq!(p, want);
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            n_images: 4,
            width: 48,
            height: 48,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn polygon_area_and_membership() {
        let mut rng = stream(3, &[]);
        let p = random_polygon(&mut rng, [50.0, 50.0], 400.0, 7);
        assert!((p.area() - 400.0).abs() < 1e-6);
        assert!(p.contains([50.0, 50.0]));
        assert!(!p.contains([0.0, 0.0]));
    }

    #[test]
    fn contrast_margin_is_enforced() {
        let mut cfg = SynthConfig::default();
        cfg.class_offsets[1] = [-11.0, 3.0, -2.0];
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            class_profile: [0.5; 7],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tolerance_one_always_matches() {
        let w = vec![ClassWeights([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])];
        assert!(profile_matches(&w, &DEFAULT_PROFILE, 1.0).unwrap());
        assert!(!profile_matches(&w, &DEFAULT_PROFILE, 0.05).unwrap());
    }
}
