//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use pwood_core::scenes::{FormMix, SceneSpec};
use pwood_core::simloop::TrainConfig;
use pwood_core::{CpfPolicy, ThresholdPolicy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: SceneSpec,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: SceneSpec::bench_v1(),
            train: TrainConfig::default(),
            out: PathBuf::from("pwood-out"),
            plots: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse `{v}`: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got `{v}`"),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn threshold_text(t: ThresholdPolicy) -> String {
    match t {
        ThresholdPolicy::Static(x) => x.to_string(),
        ThresholdPolicy::Dynamic(p) => p.name().to_string(),
    }
}

fn parse_threshold(key: &str, v: &str) -> Result<ThresholdPolicy> {
    if let Ok(p) = v.parse::<CpfPolicy>() {
        return Ok(ThresholdPolicy::Dynamic(p));
    }
    let t: f64 = v
        .parse()
        .map_err(|_| anyhow!("{key}: expected density, posterior or a number, got `{v}`"))?;
    Ok(ThresholdPolicy::Static(t))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let spec = &mut self.spec;
        let t = &mut self.train;
        let s = &mut t.schedule;
        match key {
            "scene_name" => spec.name = v.to_string(),
            "height" => spec.height = parse_num(key, v)?,
            "width" => spec.width = parse_num(key, v)?,
            "min_objects" => spec.min_objects = parse_num(key, v)?,
            "max_objects" => spec.max_objects = parse_num(key, v)?,
            "min_w" => spec.min_size[0] = parse_num(key, v)?,
            "min_h" => spec.min_size[1] = parse_num(key, v)?,
            "max_w" => spec.max_size[0] = parse_num(key, v)?,
            "max_h" => spec.max_size[1] = parse_num(key, v)?,
            "num_classes" => spec.num_classes = parse_num(key, v)?,
            "max_iou" => spec.max_iou = parse_num(key, v)?,
            "class_levels" => spec.class_levels = parse_list(key, v)?,
            "background_noise" => spec.background_noise = parse_num(key, v)?,
            "train_scenes" => spec.train_scenes = parse_num(key, v)?,
            "val_scenes" => spec.val_scenes = parse_num(key, v)?,
            "scene_seed" => spec.seed = parse_num(key, v)?,
            "pretrain_iters" => s.pretrain_iters = parse_num(key, v)?,
            "total_iters" => s.total_iters = parse_num(key, v)?,
            "burn_in_step" => s.burn_in_step = parse_num(key, v)?,
            "lr" => s.lr = parse_num(key, v)?,
            "seed" => s.seed = parse_num(key, v)?,
            "ema_momentum" => s.ema_momentum = parse_num(key, v)?,
            "threshold" => s.threshold = parse_threshold(key, v)?,
            "label_fraction" => s.labels.fraction = parse_num(key, v)?,
            "label_rbox" => s.labels.mix.rbox = parse_num(key, v)?,
            "label_hbox" => s.labels.mix.hbox = parse_num(key, v)?,
            "label_point" => s.labels.mix.point = parse_num(key, v)?,
            "label_form" => s.labels.mix = FormMix::only(v.parse().map_err(|e| anyhow!("{key}: {e}"))?),
            "label_noise" => s.labels.noise = parse_num(key, v)?,
            "unsup_weight" => t.unsup_weight = parse_num(key, v)?,
            "grad_clip" => {
                t.grad_clip = match v {
                    "none" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "symmetry" => t.symmetry = parse_bool(key, v)?,
            "eval_every" => t.eval_every = parse_num(key, v)?,
            "score_floor" => t.decode.score_floor = parse_num(key, v)?,
            "nms_iou" => t.decode.nms_iou = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "plots" => self.plots = parse_bool(key, v)?,
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    /// Config text listing every key; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let spec = &self.spec;
        let t = &self.train;
        let s = &t.schedule;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("scene_name", spec.name.clone());
        kv("height", spec.height.to_string());
        kv("width", spec.width.to_string());
        kv("min_objects", spec.min_objects.to_string());
        kv("max_objects", spec.max_objects.to_string());
        kv("min_w", spec.min_size[0].to_string());
        kv("min_h", spec.min_size[1].to_string());
        kv("max_w", spec.max_size[0].to_string());
        kv("max_h", spec.max_size[1].to_string());
        kv("num_classes", spec.num_classes.to_string());
        kv("max_iou", spec.max_iou.to_string());
        kv("class_levels", join(&spec.class_levels));
        kv("background_noise", spec.background_noise.to_string());
        kv("train_scenes", spec.train_scenes.to_string());
        kv("val_scenes", spec.val_scenes.to_string());
        kv("scene_seed", spec.seed.to_string());
        kv("pretrain_iters", s.pretrain_iters.to_string());
        kv("total_iters", s.total_iters.to_string());
        kv("burn_in_step", s.burn_in_step.to_string());
        kv("lr", s.lr.to_string());
        kv("seed", s.seed.to_string());
        kv("ema_momentum", s.ema_momentum.to_string());
        kv("threshold", threshold_text(s.threshold));
        kv("label_fraction", s.labels.fraction.to_string());
        kv("label_rbox", s.labels.mix.rbox.to_string());
        kv("label_hbox", s.labels.mix.hbox.to_string());
        kv("label_point", s.labels.mix.point.to_string());
        kv("label_noise", s.labels.noise.to_string());
        kv("unsup_weight", t.unsup_weight.to_string());
        kv(
            "grad_clip",
            t.grad_clip.map_or_else(|| "none".to_string(), |c| c.to_string()),
        );
        kv("symmetry", t.symmetry.to_string());
        kv("eval_every", t.eval_every.to_string());
        kv("score_floor", t.decode.score_floor.to_string());
        kv("nms_iou", t.decode.nms_iou.to_string());
        kv("out", self.out.display().to_string());
        kv("plots", self.plots.to_string());
        o
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.train.schedule.validate()?;
        Ok(())
    }
}
