//! Loss terms with analytic gradients.
//!
//! Scalar terms return their gradient with respect to their own arguments;
//! the dense terms in [`supervised`] and [`unsupervised`] return gradients in
//! the flat layout of [`DensePrediction`](crate::dense::DensePrediction).

mod supervised;
mod unsupervised;

pub use supervised::{
    supervised_loss, CellTarget, ObjectCell, PointTargets, SupervisedAux, SupervisedLoss,
    SupervisedWeights, SymmetryPair, TermValues,
};
pub use unsupervised::{unsupervised_loss, UnsupervisedLoss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bhattacharyya_with_grad, hbox_half_extents, normalize_angle, obb_gaussian_jacobian,
    obb_to_gaussian, rotated_iou, HBox, OrientedBox,
};

pub const SMOOTH_L1_BETA: f64 = 1.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const PROB_EPS: f64 = 1e-12;

/// Why a dense loss came back as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degenerate {
    EmptyBatch,
    EmptyActiveSet,
}

/// A loss value and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub degenerate: Option<Degenerate>,
}

impl LossValue {
    pub fn new(value: f64, grad: Vec<f64>) -> Self {
        Self {
            value,
            grad,
            degenerate: None,
        }
    }

    pub fn zero(len: usize) -> Self {
        Self::new(0.0, vec![0.0; len])
    }

    pub(crate) fn flagged(len: usize, why: Degenerate) -> Self {
        Self {
            degenerate: Some(why),
            ..Self::zero(len)
        }
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.value *= k;
        self.grad.iter_mut().for_each(|g| *g *= k);
        self
    }
}

/// Sum of the supervised and unsupervised objectives; gradients must share a
/// layout.
pub fn total_loss(sup: &LossValue, unsup: &LossValue) -> Result<LossValue> {
    if sup.grad.len() != unsup.grad.len() {
        return Err(Error::shape(sup.grad.len(), unsup.grad.len()));
    }
    let grad = sup.grad.iter().zip(&unsup.grad).map(|(a, b)| a + b).collect();
    Ok(LossValue::new(sup.value + unsup.value, grad))
}

/// Huber-style smooth L1 of `x - target`; gradient with respect to `x`.
pub fn smooth_l1(x: f64, target: f64, beta: f64) -> LossValue {
    let (v, g) = smooth_l1_raw(x - target, beta);
    LossValue::new(v, vec![g])
}

pub(crate) fn smooth_l1_raw(r: f64, beta: f64) -> (f64, f64) {
    if r.abs() < beta {
        (0.5 * r * r / beta, r / beta)
    } else {
        (r.abs() - 0.5 * beta, r.signum())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy with a soft target; gradient with respect to `p`.
pub fn bce_loss(p: f64, target: f64) -> LossValue {
    let (v, g) = bce_raw(p, target);
    LossValue::new(v, vec![g])
}

pub(crate) fn bce_raw(p: f64, t: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    let v = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
    let g = (p - t) / (p * (1.0 - p));
    (v, g)
}

/// Entropy of a Bernoulli target, the minimum of [`bce_loss`] over `p`.
pub(crate) fn bernoulli_entropy(t: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(t) + term(1.0 - t)
}

/// Sigmoid focal loss with `alpha = 0.25`, `gamma = 2` applied to both
/// targets; gradient with respect to `p`.
pub fn focal_loss(p: f64, target: bool) -> LossValue {
    let (v, g) = focal_raw(p, target);
    LossValue::new(v, vec![g])
}

pub(crate) fn focal_raw(p: f64, target: bool) -> (f64, f64) {
    let p = clamp_prob(p);
    let (pt, sign) = if target { (p, 1.0) } else { (1.0 - p, -1.0) };
    let q = 1.0 - pt;
    let v = -FOCAL_ALPHA * q.powf(FOCAL_GAMMA) * pt.ln();
    let dpt = -FOCAL_ALPHA
        * (-FOCAL_GAMMA * q.powf(FOCAL_GAMMA - 1.0) * pt.ln() + q.powf(FOCAL_GAMMA) / pt);
    (v, sign * dpt)
}

/// How a symmetric view was produced from the original input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ViewTransform {
    /// Vertical flip (rows reversed); angles change sign.
    Flip,
    /// Rotation by the given angle about the grid center.
    Rotate(f64),
}

/// Orientation consistency between a prediction and its transformed view.
/// Gradient is `[d/d theta, d/d theta_view]`.
pub fn angle_loss(theta: f64, theta_view: f64, trans: ViewTransform) -> LossValue {
    let (r, d_theta, d_view) = match trans {
        ViewTransform::Flip => (theta_view + theta, 1.0, 1.0),
        ViewTransform::Rotate(angle) => (theta_view - theta - angle, -1.0, 1.0),
    };
    let (v, g) = smooth_l1_raw(normalize_angle(r), SMOOTH_L1_BETA);
    LossValue::new(v, vec![g * d_theta, g * d_view])
}

/// Normalization of the pairwise overlap sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OverlapNorm {
    /// Divide the ordered-pair sum by the number of boxes.
    #[default]
    PerBox,
    /// Divide by the number of ordered pairs.
    PairMean,
}

/// Sum of Bhattacharyya coefficients over ordered pairs of distinct boxes.
/// Gradient has `5 N` entries laid out `(cx, cy, w, h, theta)` per box.
pub fn gaussian_overlap_loss(boxes: &[OrientedBox], norm: OverlapNorm) -> Result<LossValue> {
    let n = boxes.len();
    let mut grad = vec![0.0; 5 * n];
    if n <= 1 {
        return Ok(LossValue::new(0.0, grad));
    }
    let divisor = match norm {
        OverlapNorm::PerBox => n as f64,
        OverlapNorm::PairMean => (n * (n - 1)) as f64,
    };
    let gaussians: Vec<_> = boxes.iter().map(obb_to_gaussian).collect();
    let jacobians: Vec<_> = boxes.iter().map(obb_gaussian_jacobian).collect();
    let mut total = 0.0;
    // each unordered pair stands for two ordered terms
    let k = 2.0 / divisor;
    for i in 0..n {
        for j in i + 1..n {
            let bc = bhattacharyya_with_grad(&gaussians[i], &gaussians[j])?;
            total += k * bc.value;
            for (idx, d_mu, d_sigma) in [(i, bc.d_mu_a, bc.d_sigma_a), (j, bc.d_mu_b, bc.d_sigma_b)] {
                let g = &mut grad[5 * idx..5 * idx + 5];
                g[0] += k * d_mu[0];
                g[1] += k * d_mu[1];
                let jac = &jacobians[idx];
                for p in 0..3 {
                    let chain: f64 = (0..3).map(|e| d_sigma[e] * jac[e][p]).sum();
                    g[2 + p] += k * chain;
                }
            }
        }
    }
    Ok(LossValue::new(total, grad))
}

/// Monotone map applied to the squared Gaussian Wasserstein distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GwdTransform {
    Identity,
    /// `ln(1 + d2)`.
    #[default]
    Log1p,
    /// `1 - 1 / (1 + ln(1 + d2))`.
    Bounded,
}

impl GwdTransform {
    fn apply(self, d2: f64) -> (f64, f64) {
        match self {
            GwdTransform::Identity => (d2, 1.0),
            GwdTransform::Log1p => ((1.0 + d2).ln(), 1.0 / (1.0 + d2)),
            GwdTransform::Bounded => {
                let l = (1.0 + d2).ln();
                (1.0 - 1.0 / (1.0 + l), 1.0 / ((1.0 + l).powi(2) * (1.0 + d2)))
            }
        }
    }
}

/// Scale regression towards a watershed target. Both sides are modeled as
/// zero-mean axis-aligned Gaussians with the half-sides as standard
/// deviations. Gradient is `[d/dw, d/dh]`.
pub fn watershed_scale_loss(
    pred: &OrientedBox,
    target_wh: (f64, f64),
    transform: GwdTransform,
) -> Result<LossValue> {
    let (wt, ht) = target_wh;
    if !(wt > 0.0 && ht > 0.0) {
        return Err(Error::InvalidTarget { w: wt, h: ht });
    }
    let dw = 0.5 * (pred.w - wt);
    let dh = 0.5 * (pred.h - ht);
    let d2 = dw * dw + dh * dh;
    let (v, dv) = transform.apply(d2);
    Ok(LossValue::new(v, vec![dv * dw, dv * dh]))
}

const IOU_FD_STEP: f64 = 1e-6;

/// `1 - IoU` of two rotated boxes. The gradient with respect to
/// `(cx, cy, w, h, theta)` of `pred` is taken by central differences.
pub fn iou_loss(pred: &OrientedBox, gt: &OrientedBox) -> LossValue {
    let value = 1.0 - rotated_iou(pred, gt);
    let params = [pred.cx, pred.cy, pred.w, pred.h, pred.theta];
    let mut grad = vec![0.0; 5];
    for (k, g) in grad.iter_mut().enumerate() {
        let eval = |sgn: f64| {
            let mut p = params;
            p[k] += sgn * IOU_FD_STEP;
            let b = OrientedBox {
                cx: p[0],
                cy: p[1],
                w: p[2].max(1e-9),
                h: p[3].max(1e-9),
                theta: p[4],
            };
            1.0 - rotated_iou(&b, gt)
        };
        *g = (eval(1.0) - eval(-1.0)) / (2.0 * IOU_FD_STEP);
    }
    LossValue::new(value, grad)
}

/// `1 - IoU` between the axis-aligned envelope of `pred` and `gt`, with the
/// analytic gradient with respect to `(cx, cy, w, h, theta)` of `pred`.
pub fn hbox_iou_loss(pred: &OrientedBox, gt: &HBox) -> LossValue {
    let [ex, ey] = hbox_half_extents(pred);
    let (x1, x2, y1, y2) = (pred.cx - ex, pred.cx + ex, pred.cy - ey, pred.cy + ey);
    let iw = x2.min(gt.xmax) - x1.max(gt.xmin);
    let ih = y2.min(gt.ymax) - y1.max(gt.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return LossValue::new(1.0, vec![0.0; 5]);
    }
    let inter = iw * ih;
    let area_p = 4.0 * ex * ey;
    let union = area_p + gt.area() - inter;
    let iou = inter / union;
    let d_inter = (area_p + gt.area()) / (union * union);
    let d_area = -inter / (union * union);

    // partials of the intersection sides w.r.t. the envelope sides
    let d_iw_x2 = if x2 < gt.xmax { 1.0 } else { 0.0 };
    let d_iw_x1 = if x1 > gt.xmin { -1.0 } else { 0.0 };
    let d_ih_y2 = if y2 < gt.ymax { 1.0 } else { 0.0 };
    let d_ih_y1 = if y1 > gt.ymin { -1.0 } else { 0.0 };
    // d iou / d (cx, ex, cy, ey)
    let d_cx = d_inter * ih * (d_iw_x2 + d_iw_x1);
    let d_ex = d_inter * ih * (d_iw_x2 - d_iw_x1) + d_area * 4.0 * ey;
    let d_cy = d_inter * iw * (d_ih_y2 + d_ih_y1);
    let d_ey = d_inter * iw * (d_ih_y2 - d_ih_y1) + d_area * 4.0 * ex;

    let (s, c) = pred.theta.sin_cos();
    let (hw, hh) = (pred.w / 2.0, pred.h / 2.0);
    let (sc, ss) = (c.signum(), s.signum());
    let dex = [c.abs() / 2.0, s.abs() / 2.0, -hw * s * sc + hh * c * ss];
    let dey = [s.abs() / 2.0, c.abs() / 2.0, hw * c * ss - hh * s * sc];
    let mut grad = vec![-d_cx, -d_cy, 0.0, 0.0, 0.0];
    for k in 0..3 {
        grad[2 + k] = -(d_ex * dex[k] + d_ey * dey[k]);
    }
    LossValue::new(1.0 - iou, grad)
}
