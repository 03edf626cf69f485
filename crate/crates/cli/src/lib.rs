//! Command-line front end: dataset generation, training, threshold analysis
//! and evaluation.

pub mod config;
pub mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pwood_core::cpf::cpf;
use pwood_core::eval::ApResult;
use pwood_core::scenes::{build_dataset, format_dota, Dataset, DotaObject, SceneSpec};
use pwood_core::simloop::{evaluate, pretrain, resume, Checkpoint, ToyDetector, TrainConfig, TrainingReport};
use pwood_core::{CpfPolicy, CpfResult, ThresholdPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::RunConfig;

pub const SEED_ENV: &str = "PWOOD_SEED";

#[derive(Debug, Parser)]
#[command(name = "pwood", version, about = "Partial weakly supervised oriented detection on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file; missing keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Training seed; overrides the config and PWOOD_SEED.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// CPF policy for dynamic thresholding.
    #[arg(long, value_name = "POLICY", value_parser = ["density", "posterior"])]
    pub policy: Option<String>,
    /// Write SVG plots next to the reports.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the scenes, their annotations and a manifest.
    Gen(RunArgs),
    /// Train and write the CSV and JSON reports.
    Train(RunArgs),
    /// Fit the score mixture of a file with one score per line.
    Cpf {
        scores: PathBuf,
        #[arg(long, value_name = "POLICY", default_value = "density", value_parser = ["density", "posterior"])]
        policy: String,
    },
    /// Compare static pseudo-label thresholds against CPF.
    SweepThreshold {
        #[command(flatten)]
        run: RunArgs,
        /// Static thresholds to try.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        grid: Vec<f64>,
        /// Annotation noise levels for the robustness rows; the first is the reference.
        #[arg(long, value_delimiter = ',')]
        noise_levels: Vec<f64>,
    },
    /// Evaluate a saved model on the validation scenes.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Model JSON written by `train`.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Print the configuration.
    Config {
        #[command(flatten)]
        run: RunArgs,
        /// Print the built-in defaults, ignoring any config file.
        #[arg(long)]
        defaults: bool,
    },
}

/// Exit status for an error: 2 for configuration problems, 3 for degenerate
/// scores, 4 for I/O failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(mut e) = cause.downcast_ref::<pwood_core::Error>() {
            while let pwood_core::Error::Context { source, .. } = e {
                e = source;
            }
            return match e {
                pwood_core::Error::ConfigInvalid(_) | pwood_core::Error::SpecInfeasible(_) => 2,
                pwood_core::Error::DegenerateScores(_) => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

impl RunArgs {
    /// Loads the config and applies the environment and flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::parse(&text).map_err(|e| {
                    pwood_core::Error::ConfigInvalid(format!("parsing {}: {e:#}", p.display()))
                })?
            }
            None => RunConfig::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.set("seed", v.trim()).with_context(|| format!("{SEED_ENV}"))?;
        }
        if let Some(seed) = self.seed {
            cfg.train.schedule.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(p) = &self.policy {
            cfg.train.schedule.threshold = ThresholdPolicy::Dynamic(parse_policy(p)?);
        }
        if self.plots {
            cfg.plots = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_policy(p: &str) -> Result<CpfPolicy> {
    p.parse::<CpfPolicy>().map_err(anyhow::Error::msg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    Ok(build_dataset(&cfg.spec, &cfg.train.schedule.labels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: String,
    pub index: usize,
    pub file: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: SceneSpec,
    pub labels: pwood_core::scenes::LabelConfig,
    pub scenes: Vec<ManifestEntry>,
    /// SHA-256 over the spec, labels and every scene hash.
    pub hash: String,
}

pub fn class_name(class: usize) -> String {
    format!("class{class}")
}

/// Writes `scenes/<split>_<index>.{json,pgm,txt}` and `manifest.json`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<Manifest> {
    let ds = dataset(cfg)?;
    let dir = cfg.out.join("scenes");
    create_dir(&dir)?;
    let mut entries = Vec::new();
    let splits = [("train", &ds.train, 0), ("val", &ds.val, ds.spec.train_scenes)];
    for (split, scenes, offset) in splits {
        for (i, scene) in scenes.iter().enumerate() {
            let stem = format!("{split}_{i:04}");
            let dump = scene.dump(i, ds.spec.scene_seed(offset + i));
            write(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&dump)?)?;
            let mut pgm = Vec::new();
            scene.write_pgm(&mut pgm)?;
            write(&dir.join(format!("{stem}.pgm")), pgm)?;
            let objects: Vec<DotaObject> = scene
                .objects
                .iter()
                .map(|o| DotaObject {
                    bbox: o.bbox,
                    class: class_name(o.class),
                    difficult: false,
                })
                .collect();
            write(&dir.join(format!("{stem}.txt")), format_dota(&objects))?;
            entries.push(ManifestEntry {
                split: split.into(),
                index: i,
                file: format!("scenes/{stem}.json"),
                hash: dump.hash,
            });
        }
    }
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&ds.spec)?);
    h.update(serde_json::to_vec(&ds.labels)?);
    for e in &entries {
        h.update(e.hash.as_bytes());
    }
    let manifest = Manifest {
        seed: ds.spec.seed,
        spec: ds.spec.clone(),
        labels: ds.labels,
        scenes: entries,
        hash: hex::encode(h.finalize()),
    };
    write(&cfg.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// JSON summary written next to the CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub report: pwood_core::simloop::ReportSummary,
    pub scene_hashes_sha256: String,
}

/// Model parameters written by `train`; evaluation uses the teacher when
/// there is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub detector: ToyDetector,
    pub teacher: bool,
}

impl SavedModel {
    pub fn from_report(report: &TrainingReport, num_classes: usize) -> Self {
        let mut detector = pwood_core::simloop::ToyDetector::zeros(
            pwood_core::scenes::NUM_FEATURES,
            num_classes,
            1.0,
        );
        detector.params = report.teacher.clone().unwrap_or_else(|| report.student.clone());
        Self {
            detector,
            teacher: report.teacher.is_some(),
        }
    }
}

fn hash_hashes(hashes: &[String]) -> String {
    let mut h = Sha256::new();
    for s in hashes {
        h.update(s.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Trains and writes `report.csv`, `summary.json`, `model.json` and, with
/// plots enabled, one SVG per logged quantity.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainingReport> {
    let ds = dataset(cfg)?;
    let report = pwood_core::simloop::train(&cfg.train, &ds)?;
    create_dir(&cfg.out)?;
    write(&cfg.out.join("report.csv"), report.to_csv())?;
    let summary = TrainSummary {
        config: cfg.clone(),
        report: report.summary(),
        scene_hashes_sha256: hash_hashes(&ds.scene_hashes()),
    };
    write(&cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let model = SavedModel::from_report(&report, ds.spec.num_classes);
    write(&cfg.out.join("model.json"), serde_json::to_string(&model)?)?;
    if cfg.plots {
        write_plots(&cfg.out, &report)?;
    }
    Ok(report)
}

fn write_plots(dir: &Path, report: &TrainingReport) -> Result<()> {
    let series = |f: &dyn Fn(&pwood_core::simloop::IterationRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        report
            .records
            .iter()
            .filter_map(|r| f(r).map(|v| (r.iteration as f64, v)))
            .collect()
    };
    let plots: [(&str, &str, Vec<(f64, f64)>); 4] = [
        ("l_s.svg", "supervised loss", series(&|r| Some(r.sup_loss))),
        ("l_u.svg", "unsupervised loss", series(&|r| r.unsup_loss)),
        ("t_d.svg", "pseudo-label threshold", series(&|r| r.threshold)),
        ("ap50_val.svg", "validation AP50", series(&|r| r.val_ap)),
    ];
    for (file, title, points) in plots {
        write(&dir.join(file), plot::line_plot(title, "iteration", &points))?;
    }
    Ok(())
}

/// Reads one score per line; blank lines and `#` comments are skipped.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scores = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .with_context(|| format!("{}:{}: not a number: `{line}`", path.display(), n + 1))?;
        scores.push(v);
    }
    Ok(scores)
}

pub fn cmd_cpf(path: &Path, policy: CpfPolicy) -> Result<CpfResult> {
    let scores = read_scores(path)?;
    let mut distinct = scores.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(pwood_core::Error::DegenerateScores(format!(
            "need at least 2 distinct scores, got {}",
            distinct.len()
        ))
        .into());
    }
    Ok(cpf(&scores, policy)?)
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `static`, `cpf`, `baseline`, `pwood`, `baseline_degradation` or
    /// `pwood_degradation`.
    pub run: String,
    pub noise: f64,
    pub threshold: Option<f64>,
    pub ap50: f64,
}

pub const SWEEP_HEADER: &str = "run,noise,threshold,ap50";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let t = r.threshold.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", r.run, r.noise, t, r.ap50);
    }
    s
}

fn dynamic_policy(t: ThresholdPolicy) -> CpfPolicy {
    match t {
        ThresholdPolicy::Dynamic(p) => p,
        ThresholdPolicy::Static(_) => CpfPolicy::default(),
    }
}

fn with_threshold(cfg: &TrainConfig, t: ThresholdPolicy) -> TrainConfig {
    let mut c = cfg.clone();
    c.schedule.threshold = t;
    c
}

/// Final AP of the pretrained student with no unlabeled phase.
fn baseline_ap(cfg: &TrainConfig, ds: &Dataset, ckpt: &Checkpoint) -> Result<f64> {
    let mut base = cfg.clone();
    base.schedule = cfg.schedule.baseline();
    Ok(resume(&base, ds, ckpt.clone())?.final_ap.map)
}

/// Runs every static threshold of `grid` and one CPF run from a shared
/// pretraining, then, for each noise level, a baseline and a CPF run.
/// Writes `sweep.csv` to the output directory.
pub fn cmd_sweep_threshold(cfg: &RunConfig, grid: &[f64], noise_levels: &[f64]) -> Result<Vec<SweepRow>> {
    if cfg.train.schedule.total_iters <= cfg.train.schedule.pretrain_iters {
        bail!(pwood_core::Error::ConfigInvalid(
            "threshold sweep needs total_iters > pretrain_iters".into()
        ));
    }
    let policy = dynamic_policy(cfg.train.schedule.threshold);
    let noise = cfg.train.schedule.labels.noise;
    let ds = dataset(cfg)?;
    let ckpt = pretrain(&cfg.train, &ds)?;
    let mut rows = Vec::new();
    for &t in grid {
        let c = with_threshold(&cfg.train, ThresholdPolicy::Static(t));
        rows.push(SweepRow {
            run: "static".into(),
            noise,
            threshold: Some(t),
            ap50: resume(&c, &ds, ckpt.clone())?.final_ap.map,
        });
    }
    let c = with_threshold(&cfg.train, ThresholdPolicy::Dynamic(policy));
    let cpf_ap = resume(&c, &ds, ckpt.clone())?.final_ap.map;
    rows.push(SweepRow {
        run: "cpf".into(),
        noise,
        threshold: None,
        ap50: cpf_ap,
    });
    let mut noise_rows = Vec::new();
    for &sigma in noise_levels {
        let (base, pwood) = if sigma == noise {
            (baseline_ap(&c, &ds, &ckpt)?, cpf_ap)
        } else {
            let mut nc = c.clone();
            nc.schedule.labels.noise = sigma;
            let nds = build_dataset(&cfg.spec, &nc.schedule.labels)?;
            let nckpt = pretrain(&nc, &nds)?;
            (baseline_ap(&nc, &nds, &nckpt)?, resume(&nc, &nds, nckpt)?.final_ap.map)
        };
        noise_rows.push((sigma, base, pwood));
    }
    for &(sigma, base, pwood) in &noise_rows {
        for (run, ap50) in [("baseline", base), ("pwood", pwood)] {
            rows.push(SweepRow {
                run: run.into(),
                noise: sigma,
                threshold: None,
                ap50,
            });
        }
    }
    if let Some(&(_, base0, pwood0)) = noise_rows.first() {
        for &(sigma, base, pwood) in &noise_rows[1..] {
            for (run, d) in [("baseline_degradation", base0 - base), ("pwood_degradation", pwood0 - pwood)] {
                rows.push(SweepRow {
                    run: run.into(),
                    noise: sigma,
                    threshold: None,
                    ap50: d,
                });
            }
        }
    }
    create_dir(&cfg.out)?;
    write(&cfg.out.join("sweep.csv"), sweep_csv(&rows))?;
    Ok(rows)
}

pub fn cmd_eval(cfg: &RunConfig, model: &Path) -> Result<ApResult> {
    let text = fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
    let saved: SavedModel = serde_json::from_str(&text).with_context(|| format!("parsing {}", model.display()))?;
    let ds = dataset(cfg)?;
    Ok(evaluate(&saved.detector, &ds.val, &cfg.train.decode)?)
}

/// Runs a parsed command, printing its result to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => {
            let cfg = args.resolve()?;
            let m = cmd_gen(&cfg)?;
            println!("{} scenes written to {} (manifest {})", m.scenes.len(), cfg.out.display(), m.hash);
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let report = cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report.summary())?);
        }
        Command::Cpf { scores, policy } => {
            let r = cmd_cpf(&scores, parse_policy(&policy)?)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::SweepThreshold {
            run,
            grid,
            noise_levels,
        } => {
            let cfg = run.resolve()?;
            print!("{}", sweep_csv(&cmd_sweep_threshold(&cfg, &grid, &noise_levels)?));
        }
        Command::Eval { run, model } => {
            let cfg = run.resolve()?;
            println!("{}", serde_json::to_string_pretty(&cmd_eval(&cfg, &model)?)?);
        }
        Command::Config { run, defaults } => {
            let cfg = if defaults { RunConfig::default() } else { run.resolve()? };
            print!("{}", cfg.to_text());
        }
    }
    Ok(())
}
