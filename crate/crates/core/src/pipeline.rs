//! End-to-end runs over an in-memory dataset: standardize, enhance, group,
//! split, train, fine-tune per group, evaluate.
//!
//! Every stage draws its randomness from the run seed and parallel work is
//! collected in index order, so a report depends only on the data and the
//! configuration, never on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EnhanceConfig, PipelineConfig};
use crate::datasetops::stratify::{weight_divergence, DivergenceReport};
use crate::datasetops::{
    augment, class_weights, dataset_stats, iterative_stratify, ClassWeights, DatasetStats, LabelSet,
};
use crate::enhance::{oversaturation_rgb, GammaParams, LumaCorrector};
use crate::error::{Error, Result};
use crate::grouping::{chroma_features, cluster_chroma, ClusterReport, Grouping};
use crate::imagecore::{load_image, load_mask, resize_bilinear, resize_nearest, Image, LabelMask, NUM_CLASSES};
use crate::manifest::DatasetManifest;
use crate::metrics::{confusion, evaluate, ConfusionCounts, MetricReport};
use crate::pso::{optimize, Direction, SwarmConfig};
use crate::quality::{quality_score, QualityConfig};
use crate::rng::{derive_seed, stream};
use crate::segmath::{
    predict, train_prepared, weak_learn_prepared, PixelClassifier, TrainConfig, TrainOutcome, TrainingSet,
    WeakLearnOutcome,
};
use crate::synth::{image_name, SynthSample};

const TAG_SPLIT: u64 = 0x73706c;
const TAG_CLUSTER: u64 = 0x636c;
const TAG_TRAIN: u64 = 0x7472;
const TAG_SWARM: u64 = 0x70736f;
const TAG_AUGMENT: u64 = 0x6175;
const TAG_WEAK: u64 = 0x776c;
const TAG_BETA: u64 = 0x6274;

/// Images, masks and the names they are reported under.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Image>,
    pub masks: Vec<LabelMask>,
}

impl Dataset {
    /// Loads every record; all of them need masks. Names are the paths as
    /// written in the manifest.
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let pairs: Vec<(Image, LabelMask)> = (0..manifest.len())
            .into_par_iter()
            .map(|i| Ok((load_image(manifest.image_path(i))?, load_mask(manifest.mask_path(i)?)?)))
            .collect::<Result<_>>()?;
        let (images, masks) = pairs.into_iter().unzip();
        Ok(Dataset {
            names: manifest.records.iter().map(|r| r.image.clone()).collect(),
            images,
            masks,
        })
    }

    pub fn from_samples(samples: &[SynthSample]) -> Self {
        Dataset {
            names: (0..samples.len()).map(image_name).collect(),
            images: samples.iter().map(|s| s.image.clone()).collect(),
            masks: samples.iter().map(|s| s.mask.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Resizes every pair to `(width, height)`; pairs already that size are
    /// copied untouched.
    pub fn standardized(&self, (w, h): (usize, usize)) -> Result<Self> {
        let pairs: Vec<(Image, LabelMask)> = self
            .images
            .par_iter()
            .zip(&self.masks)
            .map(|(img, mask)| {
                let img = if (img.width(), img.height()) == (w, h) {
                    img.clone()
                } else {
                    resize_bilinear(img, w, h)?
                };
                let mask = if (mask.width(), mask.height()) == (w, h) {
                    mask.clone()
                } else {
                    resize_nearest(mask, w, h)?
                };
                Ok((img, mask))
            })
            .collect::<Result<_>>()?;
        let (images, masks) = pairs.into_iter().unzip();
        Ok(Dataset {
            names: self.names.clone(),
            images,
            masks,
        })
    }

    fn pairs(&self, images: &[Image], idx: &[usize]) -> Vec<(Image, LabelMask)> {
        idx.iter()
            .map(|&i| (images[i].clone(), self.masks[i].clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTuning {
    pub alpha: f64,
    /// Mean quality score of the sample at `alpha`.
    pub score: f64,
    /// Mean quality score of the uncorrected sample.
    pub baseline_score: f64,
    pub sample_size: usize,
    /// Best value after each swarm iteration, one row per run.
    pub history: Vec<Vec<f64>>,
}

/// Picks the gamma parameter maximizing (or minimizing, per the swarm's
/// direction) the mean quality score over `images`.
pub fn tune_alpha(
    images: &[Image],
    quality: &QualityConfig,
    swarm: &SwarmConfig,
    enhance: &EnhanceConfig,
) -> Result<AlphaTuning> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no images to tune on".into()));
    }
    let sample: Vec<Image> = images
        .iter()
        .take(enhance.tune_sample)
        .map(|img| match enhance.tune_size {
            Some((w, h)) => resize_bilinear(img, w, h),
            None => Ok(img.clone()),
        })
        .collect::<Result<_>>()?;
    let correctors: Vec<LumaCorrector> = sample.par_iter().map(LumaCorrector::new).collect();
    let n = correctors.len() as f64;
    let objective = |x: &[f64]| {
        let params = GammaParams::with_max(x[0], enhance.alpha_max).expect("swarm stays inside the bounds");
        let scores: Vec<f64> = correctors
            .par_iter()
            .map(|c| quality_score(&c.apply(params).image, quality).score)
            .collect();
        scores.iter().sum::<f64>() / n
    };
    let cfg = SwarmConfig {
        bounds: vec![(enhance.alpha_min, enhance.alpha_max)],
        ..swarm.clone()
    };
    let result = optimize(objective, &cfg)?;
    let baseline: Vec<f64> = sample.par_iter().map(|img| quality_score(img, quality).score).collect();
    Ok(AlphaTuning {
        alpha: result.best_position[0],
        score: result.best_value,
        baseline_score: baseline.iter().sum::<f64>() / n,
        sample_size: sample.len(),
        history: result.histories,
    })
}

/// Whether an image is oversaturated enough to be corrected.
pub fn passes_gate(img: &Image, gate: f64) -> bool {
    gate <= 0.0 || oversaturation_rgb(img).into_iter().fold(0.0, f64::max) >= gate
}

/// Corrects the images passing the gate; the others are copied.
pub fn enhance_gated(images: &[Image], params: GammaParams, gate: f64) -> (Vec<Image>, Vec<bool>) {
    images
        .par_iter()
        .map(|img| {
            if passes_gate(img, gate) {
                (LumaCorrector::new(img).apply(params).image, true)
            } else {
                (img.clone(), false)
            }
        })
        .unzip()
}

/// Display colors for the seven classes.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
];

/// Blends class colors over the image at half opacity; background pixels
/// are left as they are.
pub fn overlay(img: &Image, mask: &LabelMask) -> Result<Image> {
    if (img.width(), img.height()) != (mask.width(), mask.height()) {
        return Err(Error::DimensionMismatch("overlay image and mask differ in size".into()));
    }
    let mut data = img.as_raw().to_vec();
    for (px, &k) in data.chunks_exact_mut(3).zip(mask.as_raw()) {
        if k != 0 {
            for (v, c) in px.iter_mut().zip(PALETTE[k as usize]) {
                *v = (*v as u16 + c as u16).div_ceil(2) as u8;
            }
        }
    }
    Image::new(img.width(), img.height(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementSummary {
    pub enabled: bool,
    pub alpha: Option<f64>,
    pub tuning: Option<AlphaTuning>,
    pub gate: f64,
    /// Names of the corrected images.
    pub corrected: Vec<String>,
    /// Mean per-channel oversaturated fraction over the corrected images.
    pub saturation_before: [f64; 3],
    pub saturation_after: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub divergence: DivergenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub images: usize,
    pub iters: usize,
    pub beta: f64,
    pub loss_weights: Vec<f64>,
    pub loss_first: Option<f64>,
    pub loss_last: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: usize,
    pub train_images: usize,
    pub test_images: usize,
    /// Absent when weak learning is off or the group has no training images.
    pub displacement: Option<f64>,
    pub displacement_bound: Option<f64>,
    /// Fine-tuning step whose weights were kept; 0 means the base model.
    pub kept_iter: Option<usize>,
    pub base_metrics: Option<MetricReport>,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub images: usize,
    pub standard_size: (usize, usize),
    pub class_stats: DatasetStats,
    pub enhancement: EnhancementSummary,
    pub grouping: ClusterReport,
    pub group_sizes: Vec<usize>,
    pub split: SplitSummary,
    pub training: TrainingSummary,
    pub groups: Vec<GroupSummary>,
    /// Test scores of the shared model.
    pub base_metrics: MetricReport,
    /// Test scores with each image scored by its group's model.
    pub metrics: MetricReport,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Everything a run produces besides the report.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub base_model: PixelClassifier,
    pub group_models: Vec<PixelClassifier>,
    pub grouping: Grouping<2>,
    /// Standardized, possibly corrected, images the models saw.
    pub images: Vec<Image>,
    pub test: Vec<usize>,
}

/// Shared front half of a run: standardization, split, correction, grouping.
struct Prepared {
    data: Dataset,
    stats: DatasetStats,
    weights: Vec<ClassWeights>,
    labels: Vec<LabelSet>,
    train: Vec<usize>,
    test: Vec<usize>,
    enhanced: Vec<Image>,
    enhancement: EnhancementSummary,
    grouping: Grouping<2>,
    cluster: ClusterReport,
}

fn prepare(data: &Dataset, cfg: &PipelineConfig, enhance: bool) -> Result<Prepared> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset has no images".into()));
    }
    let data = data.standardized(cfg.cluster.standard_size)?;
    let weights: Vec<ClassWeights> = data.masks.par_iter().map(class_weights).collect();
    let stats = dataset_stats(&weights)?;
    let labels: Vec<LabelSet> = weights.iter().map(LabelSet::from_weights).collect();

    // the split only looks at masks, so drawing it first lets tuning use
    // training images alone
    let split = iterative_stratify(&labels, &cfg.split.proportions(), derive_seed(cfg.seed, &[TAG_SPLIT]))?;
    let (train, test) = if cfg.split.folds.is_some() {
        // fold 0 is held out
        let test = split.subsets[0].clone();
        let mut train: Vec<usize> = split.subsets[1..].concat();
        train.sort_unstable();
        (train, test)
    } else {
        (split.subsets[0].clone(), split.subsets[1].clone())
    };

    let e = &cfg.enhance;
    let mut summary = EnhancementSummary {
        enabled: enhance,
        alpha: None,
        tuning: None,
        gate: e.oversaturation_gate,
        corrected: Vec::new(),
        saturation_before: [0.0; 3],
        saturation_after: [0.0; 3],
    };
    let mut enhanced = data.images.clone();
    if enhance {
        let tuning = match e.alpha {
            Some(_) => None,
            None if !cfg.stages.tune_alpha => None,
            None => {
                let gated: Vec<Image> = train
                    .iter()
                    .filter(|&&i| passes_gate(&data.images[i], e.oversaturation_gate))
                    .map(|&i| data.images[i].clone())
                    .collect();
                if gated.is_empty() {
                    None
                } else {
                    let swarm = SwarmConfig {
                        seed: derive_seed(cfg.seed, &[TAG_SWARM]),
                        ..cfg.pso.clone()
                    };
                    Some(tune_alpha(&gated, &cfg.quality, &swarm, e)?)
                }
            }
        };
        let alpha = e.alpha.or(tuning.as_ref().map(|t| t.alpha)).unwrap_or(e.default_alpha);
        let params = GammaParams::with_max(alpha, e.alpha_max)?;
        let (images, flags) = enhance_gated(&data.images, params, e.oversaturation_gate);
        let picked: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        if !picked.is_empty() {
            let mean = |imgs: &[Image]| {
                let mut m = [0.0; 3];
                for &i in &picked {
                    for (a, b) in m.iter_mut().zip(oversaturation_rgb(&imgs[i])) {
                        *a += b / picked.len() as f64;
                    }
                }
                m
            };
            summary.saturation_before = mean(&data.images);
            summary.saturation_after = mean(&images);
        }
        summary.alpha = Some(alpha);
        summary.tuning = tuning;
        summary.corrected = picked.iter().map(|&i| data.names[i].clone()).collect();
        enhanced = images;
    }

    let points: Vec<_> = enhanced.par_iter().map(chroma_features).collect();
    let c = &cfg.cluster;
    let (grouping, cluster) = cluster_chroma(
        &points,
        c.k,
        c.candidates.0..=c.candidates.1,
        derive_seed(cfg.seed, &[TAG_CLUSTER]),
        c.options(),
    )?;
    Ok(Prepared {
        data,
        stats,
        weights,
        labels,
        train,
        test,
        enhanced,
        enhancement: summary,
        grouping,
        cluster,
    })
}

impl Prepared {
    /// Training pairs with any augmented copies appended.
    fn training_pairs(&self, images: &[Image], cfg: &PipelineConfig) -> Result<Vec<(Image, LabelMask)>> {
        let mut pairs = self.data.pairs(images, &self.train);
        let copies = cfg.stages.augment_copies;
        if copies > 0 {
            let aug = crate::datasetops::AugmentConfig {
                input_size: cfg.cluster.standard_size,
                ..cfg.augment.clone()
            };
            if aug.crop_to != cfg.cluster.standard_size {
                return Err(Error::Config(
                    "augment: crop_to must equal cluster.standard_size".into(),
                ));
            }
            let seed = derive_seed(cfg.seed, &[TAG_AUGMENT]);
            let extra: Vec<(Image, LabelMask)> = self
                .train
                .par_iter()
                .flat_map_iter(|&i| (0..copies).map(move |c| (i, c)))
                .map(|(i, c)| {
                    let mut rng = stream(seed, &[i as u64, c as u64]);
                    augment(&images[i], &self.data.masks[i], &aug, &mut rng)
                })
                .collect::<Result<_>>()?;
            pairs.extend(extra);
        }
        Ok(pairs)
    }

    fn group_train(&self, g: usize) -> Vec<usize> {
        self.train
            .iter()
            .copied()
            .filter(|&i| self.grouping.assignment[i] == g)
            .collect()
    }
}

/// Confusion counts of `idx` with image `i` scored by `model_of(i)`.
fn score<'a>(
    idx: &[usize],
    images: &[Image],
    masks: &[LabelMask],
    model_of: impl Fn(usize) -> &'a PixelClassifier + Sync,
) -> Result<ConfusionCounts> {
    let parts: Vec<ConfusionCounts> = idx
        .par_iter()
        .map(|&i| confusion(&predict(model_of(i), &images[i])?, &masks[i]))
        .collect::<Result<_>>()?;
    let mut total = ConfusionCounts::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Fine-tunes one copy of `base` per group; groups without training images
/// keep `base`.
fn fine_tune_groups(
    prep: &Prepared,
    images: &[Image],
    base: &PixelClassifier,
    cfg: &PipelineConfig,
) -> Result<Vec<Option<WeakLearnOutcome>>> {
    (0..prep.grouping.k)
        .map(|g| {
            let idx = prep.group_train(g);
            if idx.is_empty() {
                return Ok(None);
            }
            let seed = derive_seed(cfg.seed, &[TAG_WEAK, g as u64]);
            let set = TrainingSet::prepare(&prep.data.pairs(images, &idx), base.config.pixels_per_image, seed)?;
            weak_learn_prepared(base, &set, seed).map(Some)
        })
        .collect()
}

fn training_summary(out: &TrainOutcome, images: usize) -> TrainingSummary {
    TrainingSummary {
        images,
        iters: out.model.config.max_iters,
        beta: out.model.config.beta,
        loss_weights: out.model.loss_weights.clone(),
        loss_first: out.loss_history.first().copied(),
        loss_last: out.loss_history.last().copied(),
    }
}

/// Runs every enabled stage and scores the held-out images.
pub fn run_pipeline(data: &Dataset, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let prep = prepare(data, cfg, cfg.stages.enhance)?;
    let images = &prep.enhanced;
    let pairs = prep.training_pairs(images, cfg)?;
    let seed = derive_seed(cfg.seed, &[TAG_TRAIN]);
    let set = TrainingSet::prepare(&pairs, cfg.train.pixels_per_image, seed)?;
    let out = train_prepared(&set, &cfg.train, seed)?;
    let base = out.model.clone();

    let tuned = if cfg.stages.weak_learning {
        fine_tune_groups(&prep, images, &base, cfg)?
    } else {
        vec![None; prep.grouping.k]
    };
    let group_models: Vec<PixelClassifier> = tuned
        .iter()
        .map(|t| t.as_ref().map_or_else(|| base.clone(), |t| t.model.clone()))
        .collect();

    let assign = &prep.grouping.assignment;
    let masks = &prep.data.masks;
    let base_counts = score(&prep.test, images, masks, |_| &base)?;
    let counts = score(&prep.test, images, masks, |i| &group_models[assign[i]])?;
    let groups = (0..prep.grouping.k)
        .map(|g| {
            let test: Vec<usize> = prep.test.iter().copied().filter(|&i| assign[i] == g).collect();
            let (base_metrics, metrics) = if test.is_empty() {
                (None, None)
            } else {
                (
                    Some(evaluate(&score(&test, images, masks, |_| &base)?)),
                    Some(evaluate(&score(&test, images, masks, |_| &group_models[g])?)),
                )
            };
            Ok(GroupSummary {
                group: g,
                train_images: prep.group_train(g).len(),
                test_images: test.len(),
                displacement: tuned[g].as_ref().map(|t| t.displacement),
                displacement_bound: tuned[g].as_ref().map(|t| t.displacement_bound),
                kept_iter: tuned[g].as_ref().map(|t| t.kept_iter),
                base_metrics,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let split = iterative_split_summary(&prep)?;
    let report = PipelineReport {
        seed: cfg.seed,
        images: prep.data.len(),
        standard_size: cfg.cluster.standard_size,
        class_stats: prep.stats.clone(),
        enhancement: prep.enhancement.clone(),
        grouping: prep.cluster.clone(),
        group_sizes: prep.grouping.sizes(),
        split,
        training: training_summary(&out, pairs.len()),
        groups,
        base_metrics: evaluate(&base_counts),
        metrics: evaluate(&counts),
    };
    Ok(PipelineRun {
        report,
        base_model: base,
        group_models,
        grouping: prep.grouping.clone(),
        images: prep.enhanced.clone(),
        test: prep.test.clone(),
    })
}

fn iterative_split_summary(prep: &Prepared) -> Result<SplitSummary> {
    let split = crate::datasetops::StratifiedSplit {
        subsets: vec![prep.train.clone(), prep.test.clone()],
        target_proportions: Vec::new(),
    };
    let names = |idx: &[usize]| idx.iter().map(|&i| prep.data.names[i].clone()).collect();
    Ok(SplitSummary {
        train: names(&prep.train),
        test: names(&prep.test),
        divergence: weight_divergence(&split, &prep.weights, &prep.labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub beta: f64,
    pub enhance: bool,
    pub weak_learning: bool,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub alpha: Option<f64>,
    pub corrected_images: usize,
    pub groups: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub rows: Vec<AblationRow>,
}

/// Scores four nested configurations on one split: unweighted loss, then
/// adding the class-weighted loss, then enhancement, then per-group weak
/// learning. The stage switches in `cfg.stages` are ignored.
pub fn ablation(data: &Dataset, cfg: &PipelineConfig) -> Result<AblationReport> {
    let prep = prepare(data, cfg, true)?;
    let seed = derive_seed(cfg.seed, &[TAG_TRAIN]);
    let masks = &prep.data.masks;
    let raw = &prep.data.images;
    let fit = |images: &[Image], beta: f64| -> Result<PixelClassifier> {
        let pairs = prep.training_pairs(images, cfg)?;
        let set = TrainingSet::prepare(&pairs, cfg.train.pixels_per_image, seed)?;
        let tc = TrainConfig {
            beta,
            ..cfg.train.clone()
        };
        Ok(train_prepared(&set, &tc, seed)?.model)
    };
    let row = |name: &str, beta: f64, enhance: bool, wl: bool, counts: ConfusionCounts| AblationRow {
        name: name.into(),
        beta,
        enhance,
        weak_learning: wl,
        metrics: evaluate(&counts),
    };
    let beta = cfg.train.beta;
    let mut rows = Vec::with_capacity(4);

    let m = fit(raw, 0.0)?;
    rows.push(row(
        "baseline",
        0.0,
        false,
        false,
        score(&prep.test, raw, masks, |_| &m)?,
    ));
    let m = fit(raw, beta)?;
    rows.push(row(
        "weighted-loss",
        beta,
        false,
        false,
        score(&prep.test, raw, masks, |_| &m)?,
    ));
    let enhanced = &prep.enhanced;
    let m = fit(enhanced, beta)?;
    rows.push(row(
        "weighted-loss+enhance",
        beta,
        true,
        false,
        score(&prep.test, enhanced, masks, |_| &m)?,
    ));
    let tuned = fine_tune_groups(&prep, enhanced, &m, cfg)?;
    let models: Vec<&PixelClassifier> = tuned.iter().map(|t| t.as_ref().map_or(&m, |t| &t.model)).collect();
    let assign = &prep.grouping.assignment;
    let counts = score(&prep.test, enhanced, masks, |i| models[assign[i]])?;
    rows.push(row("weighted-loss+enhance+weak-learning", beta, true, true, counts));

    Ok(AblationReport {
        alpha: prep.enhancement.alpha,
        corrected_images: prep.enhancement.corrected.len(),
        groups: prep.grouping.k,
        train_images: prep.train.len(),
        test_images: prep.test.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTuning {
    pub beta: f64,
    /// Validation mIoU at `beta`.
    pub miou: f64,
    pub history: Vec<Vec<f64>>,
}

/// Searches the loss exponent in `bounds` for the best validation mIoU.
/// The training images are split once more into fit and validation parts
/// (same proportions as the main split); the test images are never seen.
/// Every candidate costs a full training run, so keep `cfg.pso` small.
pub fn tune_beta(data: &Dataset, cfg: &PipelineConfig, bounds: (f64, f64)) -> Result<BetaTuning> {
    let prep = prepare(data, cfg, cfg.stages.enhance)?;
    let labels: Vec<LabelSet> = prep.train.iter().map(|&i| prep.labels[i]).collect();
    let p = cfg.split.test_fraction.max(0.1);
    let inner = iterative_stratify(&labels, &[1.0 - p, p], derive_seed(cfg.seed, &[TAG_BETA]))?;
    let fit_idx: Vec<usize> = inner.subsets[0].iter().map(|&j| prep.train[j]).collect();
    let val_idx: Vec<usize> = inner.subsets[1].iter().map(|&j| prep.train[j]).collect();
    if fit_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::EmptyInput(
            "too few training images to hold out a validation part".into(),
        ));
    }
    let images = &prep.enhanced;
    let seed = derive_seed(cfg.seed, &[TAG_TRAIN]);
    let set = TrainingSet::prepare(&prep.data.pairs(images, &fit_idx), cfg.train.pixels_per_image, seed)?;
    let objective = |x: &[f64]| {
        let tc = TrainConfig {
            beta: x[0],
            ..cfg.train.clone()
        };
        let m = train_prepared(&set, &tc, seed).expect("configuration validated").model;
        let counts = score(&val_idx, images, &prep.data.masks, |_| &m).expect("sizes checked");
        let miou = evaluate(&counts).miou;
        if miou.is_nan() {
            0.0
        } else {
            miou
        }
    };
    let swarm = SwarmConfig {
        bounds: vec![bounds],
        seed: derive_seed(cfg.seed, &[TAG_BETA, TAG_SWARM]),
        direction: Direction::Maximize,
        ..cfg.pso.clone()
    };
    let r = optimize(objective, &swarm)?;
    Ok(BetaTuning {
        beta: r.best_position[0],
        miou: r.best_value,
        history: r.histories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.cluster.standard_size = (32, 32);
        cfg.cluster.k = Some(2);
        cfg.train.max_iters = 20;
        cfg.train.weak_max_iters = Some(5);
        cfg.train.pixels_per_image = Some(256);
        cfg.pso.n_agents = 4;
        cfg.pso.n_iters = 3;
        cfg.pso.n_runs = 1;
        cfg.enhance.tune_sample = 2;
        cfg.enhance.tune_size = Some((16, 16));
        cfg
    }

    fn small_data() -> Dataset {
        let synth = SynthConfig {
            n_images: 16,
            width: 48,
            height: 40,
            seed: 5,
            ..SynthConfig::default()
        };
        Dataset::from_samples(&generate(&synth).unwrap())
    }

    #[test]
    fn pipeline_runs_and_is_repeatable() {
        let (data, cfg) = (small_data(), small_cfg());
        let a = run_pipeline(&data, &cfg).unwrap();
        let b = run_pipeline(&data, &cfg).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.report.images, 16);
        assert_eq!(a.report.split.train.len() + a.report.split.test.len(), 16);
        assert_eq!(a.group_models.len(), a.report.grouping.k);
        for g in &a.report.groups {
            if let (Some(d), Some(b)) = (g.displacement, g.displacement_bound) {
                assert!(d <= b + 1e-12);
            }
        }
    }

    #[test]
    fn gate_zero_corrects_everything() {
        let imgs = vec![
            Image::from_fn(4, 4, |x, y| [(x * 40) as u8, (y * 30) as u8, 90]).unwrap(),
            Image::from_fn(4, 4, |x, _| if x < 2 { [255, 255, 255] } else { [10, 20, 30] }).unwrap(),
        ];
        let params = GammaParams::new(0.5).unwrap();
        let (_, flags) = enhance_gated(&imgs, params, 0.0);
        assert_eq!(flags, [true, true]);
        let (out, flags) = enhance_gated(&imgs, params, 0.5);
        assert_eq!(flags, [false, true]);
        assert_eq!(out[0], imgs[0]);
    }

    #[test]
    fn overlay_leaves_background() {
        let img = Image::filled(3, 3, [100, 100, 100]).unwrap();
        let mask = LabelMask::new(3, 3, vec![0, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let o = overlay(&img, &mask).unwrap();
        assert_eq!(o.pixel(0, 0), [100, 100, 100]);
        assert_eq!(o.pixel(1, 0), [165, 63, 88]);
    }

    #[test]
    fn ablation_has_four_rows() {
        let r = ablation(&small_data(), &small_cfg()).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[0].beta, 0.0);
        assert!(r.rows[3].weak_learning);
    }
}
