use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::assign::{assign_targets, object_cells};
use super::augment::{augment, ema_update, symmetry_view, AugmentMode, EmaState, StrongAugment};
use super::detector::ToyDetector;
use crate::annotation::WeakForm;
use crate::cpf::{filter_pseudo_labels, ThresholdPolicy, ThresholdState};
use crate::error::{Error, Result};
use crate::eval::{ap50_scenes, decode, ApResult, DecodeParams};
use crate::losses::{
    supervised_loss, unsupervised_loss, GwdTransform, ObjectCell, OverlapNorm, PointTargets,
    SupervisedAux, SupervisedWeights, SymmetryPair, ViewTransform,
};
use crate::rng::{rng_from, stream_seed, Rng};
use crate::scale_targets::{basin_extents, scene_basins, BasinLabeling, ExtentPolicy};
use crate::scenes::{Dataset, LabelConfig, LabeledScene, NUM_FEATURES};

/// Iteration counts, optimizer and teacher settings of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub pretrain_iters: usize,
    pub total_iters: usize,
    pub burn_in_step: usize,
    pub lr: f64,
    pub seed: u64,
    pub ema_momentum: f64,
    pub threshold: ThresholdPolicy,
    pub labels: LabelConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            pretrain_iters: 3000,
            total_iters: 6000,
            burn_in_step: 3000,
            lr: 0.05,
            seed: 42,
            ema_momentum: 0.999,
            threshold: ThresholdPolicy::default(),
            labels: LabelConfig::default(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ConfigInvalid(m));
        if self.burn_in_step != self.pretrain_iters {
            return fail(format!(
                "burn_in_step ({}) must equal pretrain_iters ({})",
                self.burn_in_step, self.pretrain_iters
            ));
        }
        if self.pretrain_iters > self.total_iters {
            return fail(format!(
                "pretrain_iters ({}) exceeds total_iters ({})",
                self.pretrain_iters, self.total_iters
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return fail(format!("ema momentum {} outside [0, 1]", self.ema_momentum));
        }
        if let ThresholdPolicy::Static(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("static threshold {t} outside [0, 1]"));
            }
        }
        self.labels.validate()
    }

    /// The same labels and pretraining with the unlabeled phase removed.
    pub fn baseline(&self) -> Self {
        Self {
            total_iters: self.pretrain_iters,
            ..self.clone()
        }
    }
}

/// Everything besides the schedule that shapes a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub weights: SupervisedWeights,
    pub strong: StrongAugment,
    /// Train orientation from flipped and rotated views of weakly labeled scenes.
    pub symmetry: bool,
    pub flip_prob: f64,
    /// Rotated views use an angle drawn from `[-max_rotation, max_rotation]`.
    pub max_rotation: f64,
    pub extent: ExtentPolicy,
    pub gwd: GwdTransform,
    /// Upper bound on the L2 norm of each step's gradient.
    pub grad_clip: Option<f64>,
    pub overlap: OverlapNorm,
    pub unsup_weight: f64,
    /// Validation period in iterations; zero evaluates only at the end.
    pub eval_every: usize,
    pub decode: DecodeParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            weights: SupervisedWeights::default(),
            strong: StrongAugment::default(),
            symmetry: true,
            flip_prob: 0.5,
            max_rotation: std::f64::consts::FRAC_PI_2,
            extent: ExtentPolicy::default(),
            gwd: GwdTransform::default(),
            grad_clip: Some(1.0),
            overlap: OverlapNorm::default(),
            unsup_weight: 1.0,
            eval_every: 500,
            decode: DecodeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sup_loss: f64,
    pub unsup_loss: Option<f64>,
    pub threshold: Option<f64>,
    pub active: Option<usize>,
    pub val_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub records: Vec<IterationRecord>,
    pub final_ap: ApResult,
    pub student: Vec<f64>,
    /// Teacher parameters at the end, if the unlabeled phase ran.
    pub teacher: Option<Vec<f64>>,
    /// Student parameters copied to the teacher at burn-in.
    pub burn_in_params: Option<Vec<f64>>,
}

impl TrainingReport {
    pub const CSV_HEADER: &'static str = "iteration,l_s,l_u,t_d,ap50_val";

    /// One row per iteration; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.iteration,
                r.sup_loss,
                opt(r.unsup_loss),
                opt(r.threshold),
                opt(r.val_ap)
            );
        }
        s
    }

    pub fn csv_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            seed: self.seed,
            final_map: self.final_ap.map,
            final_ap_per_class: self.final_ap.per_class.clone(),
            iterations: self.records.len(),
            csv_sha256: self.csv_hash(),
            config: self.config.clone(),
        }
    }

    /// Thresholds of the unlabeled phase in iteration order.
    pub fn threshold_trace(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.threshold).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub seed: u64,
    pub final_map: f64,
    pub final_ap_per_class: Vec<Option<f64>>,
    pub iterations: usize,
    pub csv_sha256: String,
    pub config: TrainConfig,
}

/// Per-scene data that does not change during training.
struct LabeledCache {
    scene: usize,
    form: WeakForm,
    targets: PointTargets,
    objects: Vec<usize>,
    basins: Option<BasinLabeling>,
}

fn build_cache(index: usize, scene: &LabeledScene, num_classes: usize) -> Result<LabeledCache> {
    let form = scene.form().ok_or_else(|| Error::ConfigInvalid(format!("scene {index} is unlabeled")))?;
    let targets = assign_targets(&scene.annotations, scene.height, scene.width, num_classes, 1.0);
    let objects = object_cells(&scene.annotations, scene.height, scene.width, 1.0);
    let basins = if form == WeakForm::Point {
        let points: Vec<[f64; 2]> = scene.annotations.iter().map(|a| a.anchor()).collect();
        Some(scene_basins(&points, &scene.elevation)?)
    } else {
        None
    };
    Ok(LabeledCache {
        scene: index,
        form,
        targets,
        objects,
        basins,
    })
}

/// Supervised objective of one labeled scene and its parameter gradient.
struct SupervisedStep {
    value: f64,
    grad: Vec<f64>,
}

fn supervised_step(
    det: &ToyDetector,
    dataset: &Dataset,
    cache: &LabeledCache,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<SupervisedStep> {
    let scene = &dataset.train[cache.scene];
    let pred = det.forward(&scene.features)?;
    let view = if cfg.symmetry && cache.form != WeakForm::RBox {
        let trans = if rng.random::<f64>() < cfg.flip_prob {
            ViewTransform::Flip
        } else {
            ViewTransform::Rotate(rng.random_range(-cfg.max_rotation..=cfg.max_rotation))
        };
        let v = symmetry_view(
            &scene.intensity,
            scene.height,
            scene.width,
            &scene.annotations,
            trans,
            &dataset.normalizer,
        )?;
        let vp = det.forward(&v.features)?;
        Some((trans, v, vp))
    } else {
        None
    };
    let objects: Vec<ObjectCell> = match &cache.basins {
        Some(basins) => cache
            .objects
            .iter()
            .enumerate()
            .map(|(k, &cell)| ObjectCell {
                cell,
                scale_target: basin_extents(
                    basins,
                    k as u32 + 1,
                    scene.annotations[k].anchor(),
                    pred.angle(cell),
                    cfg.extent,
                )
                .ok(),
            })
            .collect(),
        None => Vec::new(),
    };
    let aux = SupervisedAux {
        symmetry: view.as_ref().map(|(trans, v, vp)| SymmetryPair {
            view: vp,
            transform: *trans,
            correspondence: &v.correspondence,
        }),
        objects: &objects,
        overlap_norm: cfg.overlap,
        gwd_transform: cfg.gwd,
    };
    let loss = supervised_loss(&pred, &cache.targets, cache.form, &cfg.weights, &aux)?;
    let mut grad = det.backward(&scene.features, &pred, &loss.loss.grad)?;
    if let (Some((_, v, vp)), Some(vg)) = (&view, &loss.view_grad) {
        let g2 = det.backward(&v.features, vp, vg)?;
        for (a, b) in grad.iter_mut().zip(g2) {
            *a += b;
        }
    }
    Ok(SupervisedStep {
        value: loss.loss.value,
        grad,
    })
}

/// AP50 of a detector over the validation scenes.
pub fn evaluate(det: &ToyDetector, scenes: &[LabeledScene], params: &DecodeParams) -> Result<ApResult> {
    let pairs = scenes
        .iter()
        .map(|s| Ok((decode(&det.forward(&s.features)?, params), s.objects.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(ap50_scenes(&pairs, det.num_classes))
}

/// Training state at the burn-in step: the student, the random stream and
/// the records so far.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub student: ToyDetector,
    pub records: Vec<IterationRecord>,
    rng: Rng,
    /// Serialized configuration with the unlabeled-phase settings blanked.
    phase1_key: String,
}

/// The configuration fields that influence pretraining.
fn phase1_key(cfg: &TrainConfig) -> String {
    let mut c = cfg.clone();
    c.schedule.total_iters = c.schedule.pretrain_iters;
    c.schedule.ema_momentum = 0.0;
    c.schedule.threshold = ThresholdPolicy::Static(0.0);
    c.strong = StrongAugment::default();
    c.unsup_weight = 0.0;
    serde_json::to_string(&c).unwrap_or_default()
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    dataset: &'a Dataset,
    caches: Vec<LabeledCache>,
    unlabeled: Vec<usize>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        cfg.schedule.validate()?;
        if let Some(c) = cfg.grad_clip {
            if !(c > 0.0) {
                return Err(Error::ConfigInvalid(format!("gradient clip {c} must be positive")));
            }
        }
        let num_classes = dataset.spec.num_classes;
        let caches = dataset
            .labeled()
            .map(|(i, s)| build_cache(i, s, num_classes).map_err(|e| e.context(format!("labeled scene {i}"))))
            .collect::<Result<Vec<_>>>()?;
        if caches.is_empty() {
            return Err(Error::ConfigInvalid("dataset has no labeled scenes".into()));
        }
        let unlabeled: Vec<usize> = dataset.unlabeled().map(|(i, _)| i).collect();
        let s = &cfg.schedule;
        if s.total_iters > s.pretrain_iters && unlabeled.is_empty() {
            return Err(Error::ConfigInvalid("the unlabeled phase needs unlabeled scenes".into()));
        }
        Ok(Self {
            cfg,
            dataset,
            caches,
            unlabeled,
        })
    }

    /// One update of `student`; the teacher, if any, is averaged afterwards.
    fn step(
        &self,
        it: usize,
        student: &mut ToyDetector,
        teacher: Option<(&mut EmaState, &mut ThresholdState)>,
        rng: &mut Rng,
    ) -> Result<IterationRecord> {
        let cfg = self.cfg;
        let dataset = self.dataset;
        let cache = &self.caches[rng.random_range(0..self.caches.len())];
        let sup = supervised_step(student, dataset, cache, cfg, rng)
            .map_err(|e| e.context(format!("iteration {it}, supervised step")))?;
        let mut grad = sup.grad;
        let mut record = IterationRecord {
            iteration: it,
            sup_loss: sup.value,
            unsup_loss: None,
            threshold: None,
            active: None,
            val_ap: None,
        };
        let teacher = match teacher {
            Some((state, threshold)) => {
                let scene = &dataset.train[self.unlabeled[rng.random_range(0..self.unlabeled.len())]];
                let t_model = ToyDetector {
                    params: state.teacher.clone(),
                    ..student.clone()
                };
                let weak = augment(&scene.features, AugmentMode::Weak, &cfg.strong, rng);
                let t_pred = t_model.forward(&weak)?;
                let t_d = threshold.update(&t_pred.scores());
                let active = filter_pseudo_labels(&t_pred, t_d);
                let strong = augment(&scene.features, AugmentMode::Strong, &cfg.strong, rng);
                let s_pred = student.forward(&strong)?;
                let unsup = unsupervised_loss(&t_pred, &s_pred, &active)
                    .map_err(|e| e.context(format!("iteration {it}, unsupervised step")))?;
                let g = student.backward(&strong, &s_pred, &unsup.loss.grad)?;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += cfg.unsup_weight * b;
                }
                record.unsup_loss = Some(unsup.loss.value);
                record.threshold = Some(t_d);
                record.active = Some(active.len());
                Some(state)
            }
            None => None,
        };
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match cfg.grad_clip {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        for (p, g) in student.params.iter_mut().zip(&grad) {
            *p -= cfg.schedule.lr * scale * g;
        }
        if !student.params.iter().all(|p| p.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "training diverged at iteration {it}; lower the learning rate"
            )));
        }
        if let Some(state) = teacher {
            *state = ema_update(state, &student.params)?;
        }
        Ok(record)
    }

    fn maybe_evaluate(&self, record: &mut IterationRecord, model: impl FnOnce() -> ToyDetector) -> Result<()> {
        let it = record.iteration;
        let last = it + 1 == self.cfg.schedule.total_iters;
        let every = self.cfg.eval_every;
        if last || (every > 0 && (it + 1) % every == 0) {
            record.val_ap = Some(evaluate(&model(), &self.dataset.val, &self.cfg.decode)?.map);
        }
        Ok(())
    }
}

/// Runs the weakly supervised phase up to the burn-in step.
pub fn pretrain(cfg: &TrainConfig, dataset: &Dataset) -> Result<Checkpoint> {
    let run = Run::new(cfg, dataset)?;
    let sched = &cfg.schedule;
    let mut rng = rng_from(stream_seed(sched.seed, "train"));
    let mut student = ToyDetector::initialized(NUM_FEATURES, dataset.spec.num_classes, 1.0);
    let mut records = Vec::with_capacity(sched.total_iters);
    for it in 0..sched.burn_in_step {
        let mut record = run.step(it, &mut student, None, &mut rng)?;
        run.maybe_evaluate(&mut record, || student.clone())?;
        records.push(record);
    }
    Ok(Checkpoint {
        student,
        records,
        rng,
        phase1_key: phase1_key(cfg),
    })
}

/// Continues a pretrained run: copies the student to the teacher and trains
/// on labeled and unlabeled scenes until `total_iters`.
///
/// `cfg` may differ from the pretraining configuration only in settings of
/// the unlabeled phase (iterations, momentum, threshold, augmentation,
/// unsupervised weight).
pub fn resume(cfg: &TrainConfig, dataset: &Dataset, ckpt: Checkpoint) -> Result<TrainingReport> {
    if ckpt.phase1_key != phase1_key(cfg) {
        return Err(Error::ConfigInvalid(
            "checkpoint was pretrained under a different configuration".into(),
        ));
    }
    let run = Run::new(cfg, dataset)?;
    let sched = &cfg.schedule;
    let Checkpoint {
        mut student,
        mut records,
        mut rng,
        ..
    } = ckpt;
    let mut ema = None;
    let mut burn_in_params = None;
    if sched.total_iters > sched.burn_in_step {
        burn_in_params = Some(student.params.clone());
        ema = Some(EmaState {
            teacher: student.params.clone(),
            momentum: sched.ema_momentum,
        });
    } else if let Some(last) = records.last_mut() {
        // the baseline ends here; make sure its final row is evaluated
        if last.val_ap.is_none() {
            last.val_ap = Some(evaluate(&student, &dataset.val, &cfg.decode)?.map);
        }
    }
    let mut threshold = ThresholdState::new(sched.threshold);
    for it in sched.burn_in_step..sched.total_iters {
        let state = ema.as_mut().expect("teacher exists after burn-in");
        let mut record = run.step(it, &mut student, Some((state, &mut threshold)), &mut rng)?;
        let teacher = &state.teacher;
        run.maybe_evaluate(&mut record, || ToyDetector {
            params: teacher.clone(),
            ..student.clone()
        })?;
        records.push(record);
    }
    let model = match &ema {
        Some(e) => ToyDetector {
            params: e.teacher.clone(),
            ..student.clone()
        },
        None => student.clone(),
    };
    let final_ap = evaluate(&model, &dataset.val, &cfg.decode)?;
    Ok(TrainingReport {
        seed: sched.seed,
        config: cfg.clone(),
        records,
        final_ap,
        student: student.params,
        teacher: ema.map(|e| e.teacher),
        burn_in_params,
    })
}

/// Runs weakly supervised pretraining, then, if `total_iters` exceeds
/// `pretrain_iters`, the teacher-student phase on unlabeled scenes.
///
/// Every iteration samples one labeled scene; the unlabeled phase also
/// samples one unlabeled scene. Validation uses the teacher once it exists.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainingReport> {
    resume(cfg, dataset, pretrain(cfg, dataset)?)
}
