//! Linear per-pixel softmax classifier trained by momentum SGD on the
//! weighted cross-entropy, plus low-rate per-group fine-tuning.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, FEATURE_DIM, FEATURE_SPEC};
use super::loss::{sample_weights, weighted_ce};
use super::ocr::{CoarseMaps, FeatureMap};
use crate::datasetops::{class_weights, ClassWeights};
use crate::error::{Error, Result};
use crate::imagecore::{Image, LabelMask, NUM_CLASSES};
use crate::rng::stream;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Images per SGD step.
    pub batch_size: usize,
    pub max_iters: usize,
    /// Exponent of the inverse-frequency class weights; 0 disables weighting.
    pub beta: f64,
    pub weak_lr: f64,
    /// Fine-tuning steps; `None` reuses `max_iters`.
    pub weak_max_iters: Option<usize>,
    /// Pixels drawn once per image for training; `None` uses every pixel.
    pub pixels_per_image: Option<usize>,
    /// Polynomial decay exponent: step `t` of `n` uses `lr * (1 - t/n)^power`;
    /// 0 keeps the rate constant.
    pub lr_power: f64,
    /// Evenly spaced checkpoints scored during fine-tuning; the one with the
    /// best pixel accuracy on the group (the base model included, ties to
    /// the latest) is kept. 0 keeps the final weights unconditionally.
    pub weak_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 8,
            max_iters: 10_000,
            beta: 1.0,
            weak_lr: 1e-4,
            weak_max_iters: None,
            pixels_per_image: Some(4096),
            lr_power: 0.9,
            weak_checkpoints: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.weak_lr >= 0.0 && self.weak_lr <= self.learning_rate) {
            return bad("weak_lr must lie in [0, learning_rate]");
        }
        if !(self.lr_power >= 0.0 && self.lr_power.is_finite()) {
            return bad("lr_power must be finite and non-negative");
        }
        if self.pixels_per_image == Some(0) {
            return bad("pixels_per_image must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelClassifier {
    pub version: u32,
    pub feature_spec: String,
    /// (width, height) the model accepts.
    pub input_size: (usize, usize),
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Row-major `FEATURE_DIM x NUM_CLASSES`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-class loss weights used in training.
    pub loss_weights: Vec<f64>,
    pub config: TrainConfig,
    pub seed: u64,
}

impl PixelClassifier {
    /// Zero weights and bias over the given normalization.
    pub fn zeros(input_size: (usize, usize), feature_mean: Vec<f64>, feature_std: Vec<f64>) -> Self {
        PixelClassifier {
            version: MODEL_VERSION,
            feature_spec: FEATURE_SPEC.into(),
            input_size,
            feature_mean,
            feature_std,
            weights: vec![0.0; FEATURE_DIM * NUM_CLASSES],
            bias: vec![0.0; NUM_CLASSES],
            loss_weights: vec![1.0; NUM_CLASSES],
            config: TrainConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", self.version)));
        }
        if self.feature_spec != FEATURE_SPEC {
            return Err(Error::Model(format!("unknown feature spec {:?}", self.feature_spec)));
        }
        let ok = self.feature_mean.len() == FEATURE_DIM
            && self.feature_std.len() == FEATURE_DIM
            && self.weights.len() == FEATURE_DIM * NUM_CLASSES
            && self.bias.len() == NUM_CLASSES
            && self.loss_weights.len() == NUM_CLASSES;
        if !ok {
            return Err(Error::Model("parameter shapes do not match the feature spec".into()));
        }
        let params = self.weights.iter().chain(&self.bias).chain(&self.feature_mean);
        if params.chain(&self.loss_weights).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        if self.feature_std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Model("feature scales must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: PixelClassifier = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    fn normalize(&self, f: &FeatureMap) -> Vec<f64> {
        let mut z = f.data.clone();
        for row in z.chunks_exact_mut(FEATURE_DIM) {
            for ((v, m), s) in row.iter_mut().zip(&self.feature_mean).zip(&self.feature_std) {
                *v = (*v - m) / s;
            }
        }
        z
    }

    /// Logits for already-normalized feature rows.
    fn logits_of(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(z.len() / FEATURE_DIM * NUM_CLASSES);
        for row in z.chunks_exact(FEATURE_DIM) {
            let mut l = [0.0; NUM_CLASSES];
            l.copy_from_slice(&self.bias);
            for (d, v) in row.iter().enumerate() {
                let w = &self.weights[d * NUM_CLASSES..(d + 1) * NUM_CLASSES];
                for (a, b) in l.iter_mut().zip(w) {
                    *a += v * b;
                }
            }
            out.extend(l);
        }
        out
    }

    /// Per-pixel class logits, usable as coarse maps.
    pub fn logits(&self, img: &Image) -> Result<CoarseMaps> {
        if (img.width(), img.height()) != self.input_size {
            return Err(Error::DimensionMismatch(format!(
                "model expects {:?} images, got {:?}",
                self.input_size,
                (img.width(), img.height())
            )));
        }
        let f = extract_features(img);
        let data = self.logits_of(&self.normalize(&f));
        CoarseMaps::new(img.height(), img.width(), NUM_CLASSES, data)
    }

    pub fn param_norm(&self) -> f64 {
        self.weights.iter().chain(&self.bias).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn param_distance(&self, other: &PixelClassifier) -> f64 {
        let a = self.weights.iter().chain(&self.bias);
        let b = other.weights.iter().chain(&other.bias);
        a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// Index of the largest value, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict(model: &PixelClassifier, img: &Image) -> Result<LabelMask> {
    let maps = model.logits(img)?;
    let labels = maps.data.chunks_exact(NUM_CLASSES).map(|r| argmax(r) as u8).collect();
    LabelMask::new(img.width(), img.height(), labels)
}

/// Pixel rows drawn from one image, ready for training.
#[derive(Debug, Clone)]
struct Sampled {
    features: Vec<f64>,
    labels: Vec<u8>,
}

/// Features and labels extracted once and shared by several fits.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    input_size: (usize, usize),
    images: Vec<Sampled>,
    class_weights: ClassWeights,
}

impl TrainingSet {
    pub fn prepare(pairs: &[(Image, LabelMask)], pixels_per_image: Option<usize>, seed: u64) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::EmptyInput("training set has no images".into()))?;
        let input_size = (first.0.width(), first.0.height());
        for (i, (img, mask)) in pairs.iter().enumerate() {
            if (img.width(), img.height()) != input_size || (mask.width(), mask.height()) != input_size {
                return Err(Error::DimensionMismatch(format!(
                    "training pair {i} differs in size from the first"
                )));
            }
        }
        let images = pairs
            .par_iter()
            .enumerate()
            .map(|(i, (img, mask))| {
                let f = extract_features(img);
                let n = img.pixel_count();
                let picks: Vec<usize> = match pixels_per_image {
                    Some(m) if m < n => {
                        let mut rng = stream(seed, &[0x7078, i as u64]);
                        let mut p = index::sample(&mut rng, n, m).into_vec();
                        p.sort_unstable();
                        p
                    }
                    _ => (0..n).collect(),
                };
                let mut features = Vec::with_capacity(picks.len() * FEATURE_DIM);
                for &p in &picks {
                    features.extend_from_slice(f.pixel(p));
                }
                let labels = picks.iter().map(|&p| mask.as_raw()[p]).collect();
                Sampled { features, labels }
            })
            .collect();
        let per_image: Vec<ClassWeights> = pairs.iter().map(|(_, m)| class_weights(m)).collect();
        Ok(TrainingSet {
            input_size,
            images,
            class_weights: ClassWeights::mean_of(&per_image)?,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Mean per-image class weights of the set.
    pub fn class_weights(&self) -> ClassWeights {
        self.class_weights
    }

    fn normalization(&self) -> (Vec<f64>, Vec<f64>) {
        let mut sum = [0.0; FEATURE_DIM];
        let mut sum2 = [0.0; FEATURE_DIM];
        let mut n = 0usize;
        for s in &self.images {
            for row in s.features.chunks_exact(FEATURE_DIM) {
                for d in 0..FEATURE_DIM {
                    sum[d] += row[d];
                    sum2[d] += row[d] * row[d];
                }
                n += 1;
            }
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum2
            .iter()
            .zip(&mean)
            .map(|(s2, m)| (s2 / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        (mean, std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: PixelClassifier,
    /// Batch loss before each update.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLearnOutcome {
    pub model: PixelClassifier,
    pub iters: usize,
    /// Step count of the kept checkpoint; 0 means the base model was kept.
    pub kept_iter: usize,
    /// Pixel accuracy on the group's training pixels before and after.
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub displacement: f64,
    /// `weak_lr * iters * G_max / (1 - momentum)`; displacement never exceeds it.
    pub displacement_bound: f64,
    pub loss_history: Vec<f64>,
}

/// Summed loss and gradient of one image's sampled pixels (not yet averaged).
fn image_grad(model: &PixelClassifier, s: &Sampled, z: &[f64]) -> (f64, Vec<f64>, usize) {
    let logits = model.logits_of(z);
    let n = s.labels.len();
    let lg = weighted_ce(&logits, &s.labels, &model.loss_weights).expect("shapes checked at preparation");
    let mut g = vec![0.0; (FEATURE_DIM + 1) * NUM_CLASSES];
    for (row, gl) in z.chunks_exact(FEATURE_DIM).zip(lg.grad.chunks_exact(NUM_CLASSES)) {
        for (d, v) in row.iter().enumerate() {
            let gw = &mut g[d * NUM_CLASSES..(d + 1) * NUM_CLASSES];
            for (a, b) in gw.iter_mut().zip(gl) {
                *a += v * b * n as f64;
            }
        }
        let gb = &mut g[FEATURE_DIM * NUM_CLASSES..];
        for (a, b) in gb.iter_mut().zip(gl) {
            *a += b * n as f64;
        }
    }
    (lg.loss * n as f64, g, n)
}

struct Sgd {
    velocity: Vec<f64>,
    grad_max: f64,
}

struct SgdRun {
    history: Vec<f64>,
    grad_max: f64,
    /// (steps taken, weights, bias) at each requested checkpoint.
    snapshots: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

/// Runs `iters` momentum-SGD steps at `lr`, recording the batch losses and
/// a parameter snapshot after each of `checkpoints` evenly spaced steps.
#[allow(clippy::too_many_arguments)]
fn run_sgd(
    model: &mut PixelClassifier,
    set: &TrainingSet,
    normalized: &[Vec<f64>],
    lr: f64,
    iters: usize,
    checkpoints: usize,
    seed: u64,
    tag: u64,
) -> SgdRun {
    let cfg = model.config.clone();
    let mut rng = stream(seed, &[tag]);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut cursor = order.len();
    let mut opt = Sgd {
        velocity: vec![0.0; (FEATURE_DIM + 1) * NUM_CLASSES],
        grad_max: 0.0,
    };
    let mut history = Vec::with_capacity(iters);
    let mut snapshots = Vec::with_capacity(checkpoints);
    let mut next = 1;
    for t in 0..iters {
        let step = lr * (1.0 - t as f64 / iters as f64).powf(cfg.lr_power);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let parts: Vec<(f64, Vec<f64>, usize)> = batch
            .par_iter()
            .map(|&i| image_grad(model, &set.images[i], &normalized[i]))
            .collect();
        let total: usize = parts.iter().map(|p| p.2).sum();
        let mut loss = 0.0;
        let mut grad = vec![0.0; opt.velocity.len()];
        for (l, g, _) in &parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss /= total as f64;
        for g in grad.iter_mut() {
            *g /= total as f64;
        }
        for (g, w) in grad.iter_mut().zip(&model.weights) {
            *g += cfg.weight_decay * w;
        }
        history.push(loss);
        opt.grad_max = opt.grad_max.max(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
        for (v, g) in opt.velocity.iter_mut().zip(&grad) {
            *v = cfg.momentum * *v + g;
        }
        let (vw, vb) = opt.velocity.split_at(FEATURE_DIM * NUM_CLASSES);
        for (w, v) in model.weights.iter_mut().zip(vw) {
            *w -= step * v;
        }
        for (b, v) in model.bias.iter_mut().zip(vb) {
            *b -= step * v;
        }
        if next <= checkpoints && (t + 1) * checkpoints >= next * iters {
            snapshots.push((t + 1, model.weights.clone(), model.bias.clone()));
            next += 1;
        }
    }
    SgdRun {
        history,
        grad_max: opt.grad_max,
        snapshots,
    }
}

/// Fraction of the set's sampled pixels whose predicted class is correct.
fn sampled_accuracy(model: &PixelClassifier, set: &TrainingSet, normalized: &[Vec<f64>]) -> f64 {
    let (hit, total) = set
        .images
        .par_iter()
        .zip(normalized)
        .map(|(s, z)| {
            let logits = model.logits_of(z);
            let hit = logits
                .chunks_exact(NUM_CLASSES)
                .zip(&s.labels)
                .filter(|(row, &l)| argmax(row) == l as usize)
                .count();
            (hit, s.labels.len())
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    hit as f64 / total.max(1) as f64
}

fn normalized_rows(model: &PixelClassifier, set: &TrainingSet) -> Vec<Vec<f64>> {
    set.images
        .par_iter()
        .map(|s| {
            let mut z = s.features.clone();
            for row in z.chunks_exact_mut(FEATURE_DIM) {
                for ((v, m), sd) in row.iter_mut().zip(&model.feature_mean).zip(&model.feature_std) {
                    *v = (*v - m) / sd;
                }
            }
            z
        })
        .collect()
}

/// Fits a fresh model on a prepared set.
pub fn train_prepared(set: &TrainingSet, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::EmptyInput("training set has no images".into()));
    }
    let (mean, std) = set.normalization();
    let mut model = PixelClassifier::zeros(set.input_size, mean, std);
    model.config = cfg.clone();
    model.seed = seed;
    model.loss_weights = normalized_loss_weights(&set.class_weights, cfg.beta)?.to_vec();
    let z = normalized_rows(&model, set);
    let run = run_sgd(&mut model, set, &z, cfg.learning_rate, cfg.max_iters, 0, seed, 0x7367);
    Ok(TrainOutcome {
        model,
        loss_history: run.history,
    })
}

/// Inverse-frequency weights rescaled so that `sum_k mu_k w_k = 1`; the
/// expected per-pixel weight is then one and the learning rate keeps its
/// meaning whatever `beta` is.
pub fn normalized_loss_weights(mu: &ClassWeights, beta: f64) -> Result<[f64; NUM_CLASSES]> {
    let w = sample_weights(mu, beta)?;
    let scale: f64 = (0..NUM_CLASSES).map(|k| mu.get(k) * w[k]).sum();
    Ok(w.map(|v| v / scale))
}

pub fn train(pairs: &[(Image, LabelMask)], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let set = TrainingSet::prepare(pairs, cfg.pixels_per_image, seed)?;
    train_prepared(&set, cfg, seed)
}

/// Fine-tunes a copy of `model` on one group at the weak learning rate,
/// keeping its normalization and loss weights.
pub fn weak_learn_prepared(model: &PixelClassifier, set: &TrainingSet, seed: u64) -> Result<WeakLearnOutcome> {
    model.validate()?;
    model.config.validate()?;
    if set.is_empty() {
        return Err(Error::EmptyInput("group has no images".into()));
    }
    if set.input_size != model.input_size {
        return Err(Error::DimensionMismatch(format!(
            "model expects {:?} images, group has {:?}",
            model.input_size, set.input_size
        )));
    }
    let mut tuned = model.clone();
    let iters = model.config.weak_max_iters.unwrap_or(model.config.max_iters);
    let z = normalized_rows(&tuned, set);
    let cfg = &model.config;
    let run = run_sgd(
        &mut tuned,
        set,
        &z,
        cfg.weak_lr,
        iters,
        cfg.weak_checkpoints,
        seed,
        0x776c,
    );
    let accuracy_before = sampled_accuracy(model, set, &z);
    let mut kept_iter = iters;
    let mut accuracy_after = accuracy_before;
    if cfg.weak_checkpoints > 0 {
        kept_iter = 0;
        let mut candidate = model.clone();
        for (t, w, b) in &run.snapshots {
            candidate.weights.clone_from(w);
            candidate.bias.clone_from(b);
            let acc = sampled_accuracy(&candidate, set, &z);
            if acc >= accuracy_after {
                accuracy_after = acc;
                kept_iter = *t;
                tuned.weights.clone_from(w);
                tuned.bias.clone_from(b);
            }
        }
        if kept_iter == 0 {
            tuned.weights.clone_from(&model.weights);
            tuned.bias.clone_from(&model.bias);
        }
    } else {
        accuracy_after = sampled_accuracy(&tuned, set, &z);
    }
    let displacement = tuned.param_distance(model);
    let displacement_bound = cfg.weak_lr * iters as f64 * run.grad_max / (1.0 - cfg.momentum);
    Ok(WeakLearnOutcome {
        model: tuned,
        iters,
        kept_iter,
        accuracy_before,
        accuracy_after,
        displacement,
        displacement_bound,
        loss_history: run.history,
    })
}

pub fn weak_learn(model: &PixelClassifier, pairs: &[(Image, LabelMask)], seed: u64) -> Result<WeakLearnOutcome> {
    let set = TrainingSet::prepare(pairs, model.config.pixels_per_image, seed)?;
    weak_learn_prepared(model, &set, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64) -> Vec<(Image, LabelMask)> {
        (0..n)
            .map(|i| {
                let shift = (i as u64 * 7 + seed) % 5;
                let img = Image::from_fn(8, 8, |x, _| {
                    if x < 4 {
                        [40, 60, 200]
                    } else {
                        [200, 180, 30 + shift as u8]
                    }
                })
                .unwrap();
                let labels = (0..64).map(|p| if p % 8 < 4 { 0 } else { 1 }).collect();
                (img, LabelMask::new(8, 8, labels).unwrap())
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            max_iters: 60,
            pixels_per_image: None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_model_predicts_background() {
        let m = PixelClassifier::zeros((4, 4), vec![0.0; FEATURE_DIM], vec![1.0; FEATURE_DIM]);
        let img = Image::filled(4, 4, [10, 200, 30]).unwrap();
        assert!(predict(&m, &img).unwrap().as_raw().iter().all(|&v| v == 0));
        let mut m = m;
        m.bias[3] = 5.0;
        assert!(predict(&m, &img).unwrap().as_raw().iter().all(|&v| v == 3));
        assert!(predict(&m, &Image::filled(5, 4, [0; 3]).unwrap()).is_err());
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let cfg = TrainConfig {
            max_iters: 0,
            ..quick()
        };
        let out = train(&separable(3, 0), &cfg, 1).unwrap();
        assert!(out.model.weights.iter().chain(&out.model.bias).all(|&v| v == 0.0));
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn separable_colors_are_learned() {
        let data = separable(4, 2);
        let out = train(&data, &quick(), 3).unwrap();
        assert!(out.loss_history.iter().all(|l| l.is_finite()));
        assert!(out.loss_history.last().unwrap() < &out.loss_history[0]);
        for (img, mask) in &data {
            assert_eq!(predict(&out.model, img).unwrap(), *mask);
        }
    }

    #[test]
    fn weak_learning_at_zero_rate_is_identity() {
        let data = separable(4, 2);
        let mut model = train(&data, &quick(), 3).unwrap().model;
        model.config.weak_lr = 0.0;
        let out = weak_learn(&model, &data, 9).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.displacement, 0.0);
    }

    #[test]
    fn weak_displacement_within_bound() {
        let data = separable(4, 2);
        let model = train(&data, &quick(), 3).unwrap().model;
        let out = weak_learn(&model, &separable(3, 4), 5).unwrap();
        assert!(out.displacement <= out.displacement_bound + 1e-15);
    }

    #[test]
    fn weak_learning_never_loses_group_accuracy() {
        let mut model = train(
            &separable(4, 2),
            &TrainConfig {
                max_iters: 3,
                ..quick()
            },
            3,
        )
        .unwrap()
        .model;
        model.config.weak_lr = model.config.learning_rate;
        model.config.weak_max_iters = Some(20);
        for seed in 0..6 {
            let out = weak_learn(&model, &separable(3, seed), seed).unwrap();
            assert!(out.accuracy_after >= out.accuracy_before);
            assert!(out.kept_iter <= out.iters);
            assert!(out.displacement <= out.displacement_bound + 1e-15);
            if out.kept_iter == 0 {
                assert_eq!(out.model, model);
            }
        }
        model.config.weak_checkpoints = 0;
        let out = weak_learn(&model, &separable(3, 1), 1).unwrap();
        assert_eq!(out.kept_iter, out.iters);
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let model = train(
            &separable(2, 0),
            &TrainConfig {
                max_iters: 5,
                ..quick()
            },
            0,
        )
        .unwrap()
        .model;
        let back = PixelClassifier::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        let mut bad = model.clone();
        bad.version = 99;
        assert!(PixelClassifier::from_json(&bad.to_json()).is_err());
        bad = model;
        bad.bias.pop();
        assert!(PixelClassifier::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn normalized_weights_have_unit_expectation() {
        let mut mu = [0.0; NUM_CLASSES];
        mu[0] = 0.9;
        mu[2] = 0.07;
        mu[6] = 0.03;
        let mu = ClassWeights(mu);
        let w = normalized_loss_weights(&mu, 1.0).unwrap();
        let e: f64 = (0..NUM_CLASSES).map(|k| mu.get(k) * w[k]).sum();
        assert!((e - 1.0).abs() < 1e-12);
        assert!(w[6] > w[2] && w[2] > w[0]);
    }
}
