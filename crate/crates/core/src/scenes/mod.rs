//! Synthetic oriented-rectangle scenes, weak annotation derivation and DOTA
//! annotation text.

mod dota;
pub mod features;

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::{Shape, WeakAnnotation, WeakForm};
use crate::error::{Error, Result};
use crate::geometry::{obb_to_hbox, obb_to_point, rotated_iou, HBox, OrientedBox};
use crate::rng::{rng_from, split_seed, stream_seed, Rng};
use crate::scale_targets::ElevationGrid;

pub use dota::{format_dota, format_dota_line, parse_dota_annotations, DotaObject, DotaParse, DotaReject};
pub use features::{edge_map, extract_features, FeatureGrid, FeatureNormalizer, NUM_FEATURES};

/// Placement attempts per scene before accepting fewer objects.
pub const MAX_ATTEMPTS: usize = 1000;
/// Supersampling factor per axis used for coverage rendering.
const SUPERSAMPLE: usize = 4;

/// Parameters of the scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Inclusive lower bounds of the sampled `(w, h)`.
    pub min_size: [f64; 2],
    /// Inclusive upper bounds of the sampled `(w, h)`.
    pub max_size: [f64; 2],
    pub num_classes: usize,
    pub max_iou: f64,
    /// Fill intensity of each class over a zero background.
    pub class_levels: Vec<f64>,
    pub background_noise: f64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::bench_v1()
    }
}

impl SceneSpec {
    /// The fixed benchmark used by the acceptance suite.
    pub fn bench_v1() -> Self {
        Self {
            name: "bench-v1".into(),
            height: 64,
            width: 64,
            min_objects: 2,
            max_objects: 6,
            min_size: [6.0, 6.0],
            max_size: [20.0, 20.0],
            num_classes: 3,
            max_iou: 0.05,
            class_levels: vec![0.6, 1.0, 1.4],
            background_noise: 0.1,
            train_scenes: 400,
            val_scenes: 100,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.height < 2 || self.width < 2 {
            return fail("grid must be at least 2x2");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail("object count range must satisfy 1 <= min <= max");
        }
        for k in 0..2 {
            if !(self.min_size[k] > 0.0 && self.min_size[k] <= self.max_size[k]) {
                return fail("size range must satisfy 0 < min <= max");
            }
        }
        if self.num_classes == 0 || self.class_levels.len() != self.num_classes {
            return fail("class_levels must list one intensity per class");
        }
        if !(0.0..=1.0).contains(&self.max_iou) {
            return fail("max_iou must lie in [0, 1]");
        }
        if !(self.background_noise >= 0.0) {
            return fail("background_noise must be non-negative");
        }
        Ok(())
    }

    /// Seed of scene `index`; training scenes come first, then validation.
    pub fn scene_seed(&self, index: usize) -> u64 {
        split_seed(stream_seed(self.seed, "scene"), index as u64)
    }
}

/// A ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub bbox: OrientedBox,
    pub class: usize,
}

/// A rendered scene with its derived grids, ground truth and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub height: usize,
    pub width: usize,
    pub intensity: Vec<f64>,
    /// Raw features from [`generate_scene`]; datasets standardize them.
    pub features: FeatureGrid,
    pub elevation: ElevationGrid,
    pub objects: Vec<GtObject>,
    /// Empty for unlabeled scenes.
    pub annotations: Vec<WeakAnnotation>,
}

impl LabeledScene {
    pub fn is_labeled(&self) -> bool {
        !self.annotations.is_empty()
    }

    /// Form of the scene's labels, if any.
    pub fn form(&self) -> Option<WeakForm> {
        self.annotations.first().map(WeakAnnotation::form)
    }

    /// SHA-256 over the intensity grid, the ground truth and the labels.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.intensity {
            h.update(v.to_le_bytes());
        }
        for o in &self.objects {
            for v in [o.bbox.cx, o.bbox.cy, o.bbox.w, o.bbox.h, o.bbox.theta] {
                h.update(v.to_le_bytes());
            }
            h.update((o.class as u64).to_le_bytes());
        }
        h.update(serde_json::to_vec(&self.annotations).unwrap_or_default());
        hex::encode(h.finalize())
    }

    pub fn dump(&self, index: usize, seed: u64) -> SceneDump {
        SceneDump {
            index,
            seed,
            height: self.height,
            width: self.width,
            objects: self.objects.clone(),
            annotations: self.annotations.clone(),
            hash: self.hash(),
        }
    }

    /// Writes the intensity grid as an ASCII greymap scaled to its range.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let (lo, hi) = self
            .intensity
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        writeln!(out, "P2\n{} {}\n255", self.width, self.height)?;
        for row in self.intensity.chunks(self.width) {
            let line: Vec<String> = row
                .iter()
                .map(|v| (((v - lo) / span) * 255.0).round().to_string())
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// JSON form of a scene: geometry and labels, without the grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDump {
    pub index: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<GtObject>,
    pub annotations: Vec<WeakAnnotation>,
    pub hash: String,
}

fn sample_box(spec: &SceneSpec, rng: &mut Rng) -> Option<OrientedBox> {
    let mut w = rng.random_range(spec.min_size[0]..=spec.max_size[0]);
    let mut h = rng.random_range(spec.min_size[1]..=spec.max_size[1]);
    let mut theta = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
    if h > w {
        std::mem::swap(&mut w, &mut h);
        theta += std::f64::consts::FRAC_PI_2;
    }
    let probe = OrientedBox::new(0.0, 0.0, w, h, theta);
    let env = obb_to_hbox(&probe);
    let (ex, ey) = (env.xmax, env.ymax);
    let (wd, ht) = (spec.width as f64, spec.height as f64);
    if 2.0 * ex > wd || 2.0 * ey > ht {
        return None;
    }
    let cx = rng.random_range(ex..=wd - ex);
    let cy = rng.random_range(ey..=ht - ey);
    Some(OrientedBox::new(cx, cy, w, h, theta))
}

/// Fraction of each cell covered by `b`, accumulated into `out` with
/// intensity `level` painted over what is already there.
fn paint(out: &mut [f64], width: usize, height: usize, b: &OrientedBox, level: f64) {
    let env = obb_to_hbox(b);
    let c0 = env.xmin.floor().max(0.0) as usize;
    let r0 = env.ymin.floor().max(0.0) as usize;
    let c1 = (env.xmax.ceil() as usize).min(width);
    let r1 = (env.ymax.ceil() as usize).min(height);
    let step = 1.0 / SUPERSAMPLE as f64;
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for r in r0..r1 {
        for c in c0..c1 {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let p = [
                        c as f64 + (sx as f64 + 0.5) * step,
                        r as f64 + (sy as f64 + 0.5) * step,
                    ];
                    if b.contains(p) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let cov = hits as f64 / total;
                let v = &mut out[r * width + c];
                *v = *v * (1.0 - cov) + level * cov;
            }
        }
    }
}

/// Samples and renders one scene. The returned scene is unlabeled and its
/// features are raw.
pub fn generate_scene(spec: &SceneSpec, rng: &mut Rng) -> Result<LabeledScene> {
    spec.validate()?;
    let target = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut objects: Vec<GtObject> = Vec::with_capacity(target);
    let mut attempts = 0;
    while objects.len() < target && attempts < MAX_ATTEMPTS {
        attempts += 1;
        let Some(b) = sample_box(spec, rng) else {
            continue;
        };
        let class = rng.random_range(0..spec.num_classes);
        if objects
            .iter()
            .all(|o| rotated_iou(&o.bbox, &b) <= spec.max_iou)
        {
            objects.push(GtObject { bbox: b, class });
        }
    }
    if objects.is_empty() {
        return Err(Error::SpecInfeasible(format!(
            "no object of size {:?}..{:?} fits a {}x{} grid",
            spec.min_size, spec.max_size, spec.width, spec.height
        )));
    }
    let (h, w) = (spec.height, spec.width);
    let mut intensity = vec![0.0; h * w];
    for o in &objects {
        paint(&mut intensity, w, h, &o.bbox, spec.class_levels[o.class]);
    }
    if spec.background_noise > 0.0 {
        let noise = rand_distr::Normal::new(0.0, spec.background_noise)
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        for v in &mut intensity {
            *v += rng.sample(noise);
        }
    }
    scene_from_intensity(h, w, intensity, objects)
}

/// Builds the derived grids of a rendered intensity grid.
pub fn scene_from_intensity(
    height: usize,
    width: usize,
    intensity: Vec<f64>,
    objects: Vec<GtObject>,
) -> Result<LabeledScene> {
    let features = extract_features(&intensity, height, width)?;
    let elevation = ElevationGrid::new(height, width, edge_map(&intensity, height, width))?;
    Ok(LabeledScene {
        height,
        width,
        intensity,
        features,
        elevation,
        objects,
        annotations: Vec::new(),
    })
}

/// Fractions of labeled scenes carrying each weak form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormMix {
    pub rbox: f64,
    pub hbox: f64,
    pub point: f64,
}

impl FormMix {
    pub fn only(form: WeakForm) -> Self {
        let mut m = Self {
            rbox: 0.0,
            hbox: 0.0,
            point: 0.0,
        };
        match form {
            WeakForm::RBox => m.rbox = 1.0,
            WeakForm::HBox => m.hbox = 1.0,
            WeakForm::Point => m.point = 1.0,
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.rbox, self.hbox, self.point];
        if parts.iter().any(|p| !(*p >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigInvalid(format!(
                "form mix {parts:?} must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> WeakForm {
        if u < self.rbox {
            WeakForm::RBox
        } else if u < self.rbox + self.hbox {
            WeakForm::HBox
        } else {
            WeakForm::Point
        }
    }
}

impl Default for FormMix {
    fn default() -> Self {
        Self::only(WeakForm::HBox)
    }
}

/// Converts a ground-truth object to a label of the given form.
pub fn weaken(o: &GtObject, form: WeakForm) -> WeakAnnotation {
    match form {
        WeakForm::RBox => WeakAnnotation::rbox(o.class, o.bbox),
        WeakForm::HBox => WeakAnnotation::hbox(o.class, obb_to_hbox(&o.bbox)),
        WeakForm::Point => WeakAnnotation::point(o.class, obb_to_point(&o.bbox)),
    }
}

/// Labels a scene with probability `p`, in a single form drawn from `mix`.
/// Always consumes exactly two draws so streams stay aligned across settings.
pub fn derive_annotations(
    gt: &[GtObject],
    mix: &FormMix,
    p: f64,
    rng: &mut Rng,
) -> Option<Vec<WeakAnnotation>> {
    let labeled = rng.random::<f64>() < p;
    let form = mix.pick(rng.random::<f64>());
    labeled.then(|| gt.iter().map(|o| weaken(o, form)).collect())
}

/// Perturbs every coordinate of a label by `Uniform(-sigma*H, sigma*H)` with
/// `H` the object height, clipped to `[0, width] x [0, height]`. Oriented
/// boxes move their center only.
pub fn inject_noise(
    ann: &WeakAnnotation,
    gt: &OrientedBox,
    sigma: f64,
    bounds: [f64; 2],
    rng: &mut Rng,
) -> WeakAnnotation {
    if sigma <= 0.0 {
        return *ann;
    }
    let amp = sigma * gt.h;
    let mut jitter = |v: f64, hi: f64| (v + rng.random_range(-amp..=amp)).clamp(0.0, hi);
    let shape = match ann.shape {
        Shape::Point { x, y } => Shape::Point {
            x: jitter(x, bounds[0]),
            y: jitter(y, bounds[1]),
        },
        Shape::HBox(b) => {
            let (x0, y0) = (jitter(b.xmin, bounds[0]), jitter(b.ymin, bounds[1]));
            let (x1, y1) = (jitter(b.xmax, bounds[0]), jitter(b.ymax, bounds[1]));
            let (xmin, xmax) = ordered(x0, x1, bounds[0]);
            let (ymin, ymax) = ordered(y0, y1, bounds[1]);
            Shape::HBox(HBox::new(xmin, ymin, xmax, ymax))
        }
        Shape::RBox(b) => {
            let (cx, cy) = (jitter(b.cx, bounds[0]), jitter(b.cy, bounds[1]));
            Shape::RBox(OrientedBox { cx, cy, ..b })
        }
    };
    WeakAnnotation {
        class: ann.class,
        shape,
    }
}

/// Sorts a coordinate pair and keeps at least a sliver of extent.
fn ordered(a: f64, b: f64, hi: f64) -> (f64, f64) {
    const MIN_EXTENT: f64 = 1e-3;
    let (lo, up) = if a <= b { (a, b) } else { (b, a) };
    if up - lo >= MIN_EXTENT {
        (lo, up)
    } else if lo + MIN_EXTENT <= hi {
        (lo, lo + MIN_EXTENT)
    } else {
        (up - MIN_EXTENT, up)
    }
}

/// How the labeled subset of a dataset is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub fraction: f64,
    pub mix: FormMix,
    pub noise: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            mix: FormMix::default(),
            noise: 0.0,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::ConfigInvalid(format!(
                "labeled fraction {} outside [0, 1]",
                self.fraction
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::ConfigInvalid("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Training and validation scenes with standardized features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub labels: LabelConfig,
    pub normalizer: FeatureNormalizer,
    pub train: Vec<LabeledScene>,
    pub val: Vec<LabeledScene>,
}

impl Dataset {
    pub fn labeled(&self) -> impl Iterator<Item = (usize, &LabeledScene)> {
        self.train.iter().enumerate().filter(|(_, s)| s.is_labeled())
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = (usize, &LabeledScene)> {
        self.train.iter().enumerate().filter(|(_, s)| !s.is_labeled())
    }

    /// Hash of every scene in order, training scenes first.
    pub fn scene_hashes(&self) -> Vec<String> {
        self.train.iter().chain(&self.val).map(LabeledScene::hash).collect()
    }
}

/// Generates the scenes of `spec`, labels the training split and fits the
/// feature standardization on the training features.
///
/// Scene content depends only on `spec`; which scenes are labeled depends on
/// `spec.seed` and `labels.fraction`, the form on `labels.mix`, and the noise
/// draws on a separate stream, so changing one setting leaves the others'
/// random choices intact.
pub fn build_dataset(spec: &SceneSpec, labels: &LabelConfig) -> Result<Dataset> {
    spec.validate()?;
    labels.validate()?;
    let total = spec.train_scenes + spec.val_scenes;
    let mut scenes = (0..total)
        .map(|i| {
            generate_scene(spec, &mut rng_from(spec.scene_seed(i)))
                .map_err(|e| e.context(format!("scene {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let label_root = stream_seed(spec.seed, "labels");
    let noise_root = stream_seed(spec.seed, "label-noise");
    let bounds = [spec.width as f64, spec.height as f64];
    for (i, scene) in scenes.iter_mut().take(spec.train_scenes).enumerate() {
        let mut rng = rng_from(split_seed(label_root, i as u64));
        if let Some(anns) = derive_annotations(&scene.objects, &labels.mix, labels.fraction, &mut rng) {
            let mut noise_rng = rng_from(split_seed(noise_root, i as u64));
            scene.annotations = anns
                .iter()
                .zip(&scene.objects)
                .map(|(a, o)| inject_noise(a, &o.bbox, labels.noise, bounds, &mut noise_rng))
                .collect();
        }
    }
    let val = scenes.split_off(spec.train_scenes);
    let mut train = scenes;
    let normalizer = FeatureNormalizer::fit(train.iter().map(|s| &s.features));
    let mut val = val;
    for s in train.iter_mut().chain(val.iter_mut()) {
        normalizer.apply(&mut s.features);
    }
    Ok(Dataset {
        spec: spec.clone(),
        labels: *labels,
        normalizer,
        train,
        val,
    })
}
