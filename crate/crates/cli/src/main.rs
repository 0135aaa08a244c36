//! `grapheneseg` command-line driver. Each subcommand runs one stage over a
//! JSON-lines manifest; `pipeline` and `ablation` run everything in memory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use grapheneseg::config::PipelineConfig;
use grapheneseg::datasetops::{augment, class_weights, dataset_stats, iterative_stratify, LabelSet};
use grapheneseg::enhance::{EnhancementReport, GammaParams, LumaCorrector};
use grapheneseg::grouping::{assign_groups, chroma_features, cluster_chroma};
use grapheneseg::imagecore::{encode_image_png, encode_mask_png, load_image, load_mask, resize_bilinear};
use grapheneseg::manifest::{Record, Split};
use grapheneseg::metrics::{confusion, evaluate, ConfusionCounts};
use grapheneseg::pipeline::{
    ablation, overlay, passes_gate, run_pipeline, tune_alpha, tune_beta, Dataset, PipelineReport,
};
use grapheneseg::pso::SwarmConfig;
use grapheneseg::quality::quality_score;
use grapheneseg::rng::stream;
use grapheneseg::segmath::{predict, train, weak_learn, PixelClassifier};
use grapheneseg::synth::{generate, write_corpus};
use grapheneseg::DatasetManifest;

#[derive(Parser)]
#[command(
    name = "grapheneseg",
    version,
    about = "Segmentation tooling for graphene flake micrographs"
)]
struct Cli {
    /// TOML config; falls back to $GRAPHENESEG_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: config, then all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Refuse to overwrite existing output files.
    #[arg(long, global = true)]
    no_clobber: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct SwarmArgs {
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus with masks and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Per-class pixel-weight statistics.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the statistics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quality score of single images.
    Quality { images: Vec<PathBuf> },
    /// Search the gamma parameter maximizing mean quality of oversaturated images.
    TuneAlpha {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        swarm: SwarmArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correct oversaturated images; writes images, masks and a manifest.
    Enhance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip tuning and use this value.
        #[arg(long)]
        alpha: Option<f64>,
        /// Correct every image, ignoring the oversaturation gate.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        swarm: SwarmArgs,
    },
    /// Group images by mean chroma; writes a manifest with group ids.
    Cluster {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Stratified train/test (or k-fold) split; writes a manifest with split tags.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Write augmented copies of every pair.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        copies: usize,
    },
    /// Train a classifier on the training records (all records when none are tagged).
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a model on one group at the weak learning rate.
    Weaklearn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        group: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write predicted masks under OUT, mirroring the image paths.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overlays: bool,
    },
    /// Score predicted masks against the manifest's masks.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory written by `predict`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write a report and the models.
    Pipeline {
        /// Input data; a synthetic corpus from the config is used when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overlays: bool,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        swarm: SwarmArgs,
    },
    /// Compare the baseline against weighted loss, enhancement and weak learning.
    Ablation {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search the loss exponent for the best validation mIoU.
    TuneBeta {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        beta_max: f64,
        #[command(flatten)]
        swarm: SwarmArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: PipelineConfig,
    no_clobber: bool,
}

impl Ctx {
    fn swarm(&self, a: &SwarmArgs) -> SwarmConfig {
        let mut s = self.cfg.pso.clone();
        s.n_agents = a.agents.unwrap_or(s.n_agents);
        s.n_iters = a.iters.unwrap_or(s.n_iters);
        s.n_runs = a.runs.unwrap_or(s.n_runs);
        s.seed = self.cfg.seed;
        s
    }

    /// Writes via a temporary file in the same directory, so readers never
    /// see a partial file.
    fn write(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        if self.no_clobber && path.exists() {
            bail!("{} exists and --no-clobber is set", path.display());
        }
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.persist(path)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(path, s.as_bytes())
    }

    fn write_manifest(&self, path: &Path, m: &DatasetManifest) -> Result<()> {
        self.write(path, m.to_jsonl().as_bytes())
    }

    fn dataset(&self, manifest: Option<&Path>) -> Result<Dataset> {
        match manifest {
            Some(p) => Ok(Dataset::load(&DatasetManifest::load(p)?)?),
            None => {
                let synth = grapheneseg::synth::SynthConfig {
                    seed: self.cfg.seed,
                    ..self.cfg.synth.clone()
                };
                Ok(Dataset::from_samples(&generate(&synth)?))
            }
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_model(path: &Path) -> Result<PixelClassifier> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PixelClassifier::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

/// The first `n` images, in manifest order, that pass the gate.
fn gated_sample(m: &DatasetManifest, gate: f64, n: usize) -> Result<Vec<grapheneseg::Image>> {
    let mut imgs = Vec::new();
    for i in 0..m.len() {
        if imgs.len() == n {
            break;
        }
        let img = load_image(m.image_path(i))?;
        if passes_gate(&img, gate) {
            imgs.push(img);
        }
    }
    Ok(imgs)
}

fn training_indices(m: &DatasetManifest) -> Vec<usize> {
    let tagged = m.indices_in(Split::Train);
    if tagged.is_empty() && m.records.iter().all(|r| r.split.is_none()) {
        (0..m.len()).collect()
    } else {
        tagged
    }
}

fn pairs(m: &DatasetManifest, idx: &[usize]) -> Result<Vec<(grapheneseg::Image, grapheneseg::LabelMask)>> {
    use rayon::prelude::*;
    Ok(idx
        .par_iter()
        .map(|&i| Ok((load_image(m.image_path(i))?, load_mask(m.mask_path(i)?)?)))
        .collect::<grapheneseg::Result<_>>()?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = Some(j);
    }
    cfg.validate()?;
    if let Some(j) = cfg.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let ctx = Ctx {
        cfg,
        no_clobber: cli.no_clobber,
    };
    let cfg = &ctx.cfg;

    match cli.cmd {
        Cmd::Synth { out, n, width, height } => {
            let mut s = cfg.synth.clone();
            s.seed = cfg.seed;
            s.n_images = n.unwrap_or(s.n_images);
            s.width = width.unwrap_or(s.width);
            s.height = height.unwrap_or(s.height);
            if ctx.no_clobber && out.join("manifest.jsonl").exists() {
                bail!("{} already holds a corpus and --no-clobber is set", out.display());
            }
            let m = write_corpus(&s, &out)?;
            println!("wrote {} images to {}", m.len(), out.display());
        }
        Cmd::Stats { manifest, out } => {
            use rayon::prelude::*;
            let m = DatasetManifest::load(&manifest)?;
            let weights = (0..m.len())
                .into_par_iter()
                .map(|i| Ok(class_weights(&load_mask(m.mask_path(i)?)?)))
                .collect::<grapheneseg::Result<Vec<_>>>()?;
            let stats = dataset_stats(&weights)?;
            print!("{}", stats.table());
            if let Some(out) = out {
                ctx.write_json(&out, &stats)?;
            }
        }
        Cmd::Quality { images } => {
            if images.is_empty() {
                bail!("no images given");
            }
            for p in images {
                let r = quality_score(&load_image(&p)?, &cfg.quality);
                println!("{}\t{}", p.display(), serde_json::to_string(&r)?);
            }
        }
        Cmd::TuneAlpha { manifest, swarm, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let imgs = gated_sample(&m, cfg.enhance.oversaturation_gate, cfg.enhance.tune_sample)?;
            if imgs.is_empty() {
                bail!("no image passes the oversaturation gate");
            }
            let t = tune_alpha(&imgs, &cfg.quality, &ctx.swarm(&swarm), &cfg.enhance)?;
            println!(
                "alpha {:.6} score {:.6} (uncorrected {:.6})",
                t.alpha, t.score, t.baseline_score
            );
            if let Some(out) = out {
                ctx.write_json(&out, &t)?;
            }
        }
        Cmd::Enhance {
            manifest,
            out,
            alpha,
            all,
            swarm,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let gate = if all { 0.0 } else { cfg.enhance.oversaturation_gate };
            let alpha = match alpha.or(cfg.enhance.alpha) {
                Some(a) => a,
                None => {
                    let imgs = gated_sample(&m, gate, cfg.enhance.tune_sample)?;
                    if imgs.is_empty() {
                        cfg.enhance.default_alpha
                    } else {
                        tune_alpha(&imgs, &cfg.quality, &ctx.swarm(&swarm), &cfg.enhance)?.alpha
                    }
                }
            };
            let params = GammaParams::with_max(alpha, cfg.enhance.alpha_max)?;
            let mut reports = Vec::with_capacity(m.len());
            for (i, r) in m.records.iter().enumerate() {
                let img = load_image(m.image_path(i))?;
                let outcome = if passes_gate(&img, gate) {
                    Some(LumaCorrector::new(&img).apply(params))
                } else {
                    None
                };
                let written = outcome.as_ref().map_or(&img, |o| &o.image);
                ctx.write(&out.join(&r.image), &encode_image_png(written)?)?;
                if let Some(mask) = &r.mask {
                    let bytes = std::fs::read(m.mask_path(i)?)?;
                    ctx.write(&out.join(mask), &bytes)?;
                }
                reports.push((
                    r.image.clone(),
                    outcome.map(|o| EnhancementReport::new(&img, &o, params)),
                ));
            }
            let kept = DatasetManifest::new(m.records.clone())?;
            ctx.write_manifest(&out.join("manifest.jsonl"), &kept)?;
            ctx.write_json(&out.join("enhance_report.json"), &reports)?;
            let n = reports.iter().filter(|r| r.1.is_some()).count();
            println!("alpha {alpha:.6}: corrected {n} of {} images", m.len());
        }
        Cmd::Cluster { manifest, out, k } => {
            use rayon::prelude::*;
            let m = DatasetManifest::load(&manifest)?;
            let (w, h) = cfg.cluster.standard_size;
            let points = (0..m.len())
                .into_par_iter()
                .map(|i| Ok(chroma_features(&resize_bilinear(&load_image(m.image_path(i))?, w, h)?)))
                .collect::<grapheneseg::Result<Vec<_>>>()?;
            let c = &cfg.cluster;
            let (g, report) = cluster_chroma(
                &points,
                k.or(c.k),
                c.candidates.0..=c.candidates.1,
                cfg.seed,
                c.options(),
            )?;
            ctx.write_manifest(&out, &assign_groups(&m, &g)?)?;
            println!(
                "k {} silhouette {:.4} sizes {:?}",
                report.k,
                report.silhouette,
                g.sizes()
            );
        }
        Cmd::Split {
            manifest,
            out,
            test_fraction,
            folds,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let mut sc = cfg.split.clone();
            sc.test_fraction = test_fraction.unwrap_or(sc.test_fraction);
            sc.folds = folds.or(sc.folds);
            sc.validate()?;
            let labels = (0..m.len())
                .map(|i| Ok(LabelSet::from_weights(&class_weights(&load_mask(m.mask_path(i)?)?))))
                .collect::<grapheneseg::Result<Vec<_>>>()?;
            let split = iterative_stratify(&labels, &sc.proportions(), cfg.seed)?;
            let mut tagged = m.clone();
            for (j, subset) in split.subsets.iter().enumerate() {
                let tag = match sc.folds {
                    Some(_) => Split::Fold(j),
                    None if j == 0 => Split::Train,
                    None => Split::Test,
                };
                for &i in subset {
                    tagged.records[i].split = Some(tag);
                }
            }
            ctx.write_manifest(&out, &tagged)?;
            let sizes: Vec<usize> = split.subsets.iter().map(Vec::len).collect();
            println!("subset sizes {sizes:?}");
        }
        Cmd::Augment { manifest, out, copies } => {
            let m = DatasetManifest::load(&manifest)?;
            let mut records = Vec::new();
            for i in 0..m.len() {
                let img = load_image(m.image_path(i))?;
                let mask = load_mask(m.mask_path(i)?)?;
                let aug_cfg = grapheneseg::datasetops::AugmentConfig {
                    input_size: (img.width(), img.height()),
                    ..cfg.augment.clone()
                };
                for c in 0..copies {
                    let mut rng = stream(cfg.seed, &[i as u64, c as u64]);
                    let (ai, am) = augment(&img, &mask, &aug_cfg, &mut rng)?;
                    let name = format!("images/{i:05}-{c}.png");
                    let mname = format!("masks/{i:05}-{c}.png");
                    ctx.write(&out.join(&name), &encode_image_png(&ai)?)?;
                    ctx.write(&out.join(&mname), &encode_mask_png(&am)?)?;
                    let mut r = Record::new(name, Some(mname));
                    r.group = m.records[i].group;
                    r.split = m.records[i].split;
                    records.push(r);
                }
            }
            let n = records.len();
            ctx.write_manifest(&out.join("manifest.jsonl"), &DatasetManifest::new(records)?)?;
            println!("wrote {n} augmented pairs");
        }
        Cmd::Train { manifest, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let idx = training_indices(&m);
            if idx.is_empty() {
                bail!("manifest has no training records");
            }
            let o = train(&pairs(&m, &idx)?, &cfg.train, cfg.seed)?;
            ctx.write(&out, o.model.to_json().as_bytes())?;
            let last = o.loss_history.last().copied().unwrap_or(f64::NAN);
            println!("trained on {} images, final batch loss {last:.6}", idx.len());
        }
        Cmd::Weaklearn {
            model,
            manifest,
            group,
            out,
        } => {
            let base = load_model(&model)?;
            let m = DatasetManifest::load(&manifest)?;
            let idx: Vec<usize> = training_indices(&m)
                .into_iter()
                .filter(|&i| m.records[i].group == Some(group))
                .collect();
            if idx.is_empty() {
                bail!("no training records in group {group}");
            }
            let o = weak_learn(&base, &pairs(&m, &idx)?, cfg.seed)?;
            ctx.write(&out, o.model.to_json().as_bytes())?;
            println!(
                "fine-tuned on {} images: kept step {} of {}, accuracy {:.4} -> {:.4}, displacement {:.3e} (bound {:.3e})",
                idx.len(),
                o.kept_iter,
                o.iters,
                o.accuracy_before,
                o.accuracy_after,
                o.displacement,
                o.displacement_bound
            );
        }
        Cmd::Predict {
            model,
            manifest,
            out,
            overlays,
        } => {
            let model = load_model(&model)?;
            let m = DatasetManifest::load(&manifest)?;
            for (i, r) in m.records.iter().enumerate() {
                let img = load_image(m.image_path(i))?;
                let pred = predict(&model, &img)?;
                ctx.write(&out.join(&r.image), &encode_mask_png(&pred)?)?;
                if overlays {
                    ctx.write(
                        &out.join("overlays").join(&r.image),
                        &encode_image_png(&overlay(&img, &pred)?)?,
                    )?;
                }
            }
            println!("predicted {} images", m.len());
        }
        Cmd::Eval { manifest, pred, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let mut total = ConfusionCounts::default();
            for (i, r) in m.records.iter().enumerate() {
                let truth = load_mask(m.mask_path(i)?)?;
                let p = load_mask(pred.join(&r.image))?;
                total.merge(&confusion(&p, &truth).with_context(|| format!("record {}", r.image))?);
            }
            let report = evaluate(&total);
            print!("{}", report.table());
            println!(
                "pixel accuracy {:.4}  mIoU {:.4}  F1 {:.4}",
                report.pixel_accuracy, report.miou, report.f1
            );
            if let Some(out) = out {
                ctx.write_json(&out, &report)?;
            }
        }
        Cmd::Pipeline {
            manifest,
            out,
            overlays,
            k,
            swarm,
        } => {
            let mut pcfg = cfg.clone();
            pcfg.cluster.k = k.or(pcfg.cluster.k);
            pcfg.pso = ctx.swarm(&swarm);
            pcfg.stages.overlays |= overlays;
            let data = ctx.dataset(manifest.as_deref())?;
            let run = run_pipeline(&data, &pcfg)?;
            write_pipeline(&ctx, &out, &run.report)?;
            ctx.write(&out.join("models/base.json"), run.base_model.to_json().as_bytes())?;
            for (g, model) in run.group_models.iter().enumerate() {
                ctx.write(&out.join(format!("models/group-{g}.json")), model.to_json().as_bytes())?;
            }
            if pcfg.stages.overlays {
                for &i in &run.test {
                    let model = &run.group_models[run.grouping.assignment[i]];
                    let pred = predict(model, &run.images[i])?;
                    let png = encode_image_png(&overlay(&run.images[i], &pred)?)?;
                    ctx.write(&out.join("overlays").join(&data.names[i]), &png)?;
                }
            }
            let r = &run.report;
            println!(
                "test mIoU {:.4} (shared model {:.4}), pixel accuracy {:.4}",
                r.metrics.miou, r.base_metrics.miou, r.metrics.pixel_accuracy
            );
        }
        Cmd::Ablation { manifest, out } => {
            let data = ctx.dataset(manifest.as_deref())?;
            let r = ablation(&data, cfg)?;
            for row in &r.rows {
                println!(
                    "{:<40} mIoU {:.4}  pixel accuracy {:.4}",
                    row.name, row.metrics.miou, row.metrics.pixel_accuracy
                );
            }
            ctx.write_json(&out, &r)?;
        }
        Cmd::TuneBeta {
            manifest,
            beta_max,
            swarm,
            out,
        } => {
            let mut pcfg = cfg.clone();
            pcfg.pso = ctx.swarm(&swarm);
            let data = ctx.dataset(manifest.as_deref())?;
            let t = tune_beta(&data, &pcfg, (0.0, beta_max))?;
            println!("beta {:.4} validation mIoU {:.4}", t.beta, t.miou);
            match out {
                Some(out) => ctx.write_json(&out, &t)?,
                None => print_json(&t)?,
            }
        }
    }
    Ok(())
}

fn write_pipeline(ctx: &Ctx, out: &Path, report: &PipelineReport) -> Result<()> {
    ctx.write(&out.join("report.json"), report.to_json().as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
