use serde::{Deserialize, Serialize};

use super::{
    angle_loss, bce_raw, bernoulli_entropy, focal_raw, gaussian_overlap_loss, hbox_iou_loss,
    iou_loss, watershed_scale_loss, Degenerate, GwdTransform, LossValue, OverlapNorm,
    ViewTransform,
};
use crate::annotation::{Shape, WeakAnnotation, WeakForm};
use crate::dense::{decode_jacobian, slot, DensePrediction};
use crate::error::{Error, Result};
use crate::geometry::{obb_to_hbox, OrientedBox};

/// Relative weights of the six supervised terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedWeights {
    pub cls: f64,
    pub centerness: f64,
    pub bbox: f64,
    pub angle: f64,
    pub overlap: f64,
    pub watershed: f64,
}

impl Default for SupervisedWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            centerness: 1.0,
            bbox: 1.0,
            angle: 0.2,
            overlap: 10.0,
            watershed: 5.0,
        }
    }
}

/// Target attached to a positive cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub class: usize,
    /// Index into [`PointTargets::annotations`].
    pub annotation: usize,
    pub distances: Option<[f64; 4]>,
    pub centerness: Option<f64>,
    pub angle: Option<f64>,
}

/// Per-cell training targets of one scene; `None` cells are negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTargets {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub cells: Vec<Option<CellTarget>>,
    pub annotations: Vec<WeakAnnotation>,
}

impl PointTargets {
    pub fn num_positive(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Predictions on a transformed view together with the cell correspondence
/// `(original cell, view cell)`.
#[derive(Debug, Clone, Copy)]
pub struct SymmetryPair<'a> {
    pub view: &'a DensePrediction,
    pub transform: ViewTransform,
    pub correspondence: &'a [(usize, usize)],
}

/// Cell whose predicted box represents an annotated object, with its
/// watershed scale target when one is available. Entry `k` belongs to
/// annotation `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectCell {
    pub cell: usize,
    pub scale_target: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SupervisedAux<'a> {
    pub symmetry: Option<SymmetryPair<'a>>,
    pub objects: &'a [ObjectCell],
    pub overlap_norm: OverlapNorm,
    pub gwd_transform: GwdTransform,
}

/// Unweighted values of the individual terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub cls: f64,
    pub centerness: f64,
    pub bbox: f64,
    pub angle: f64,
    pub overlap: f64,
    pub watershed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedLoss {
    /// Weighted total; gradient with respect to the original-view prediction.
    pub loss: LossValue,
    /// Gradient with respect to the transformed-view prediction, if any.
    pub view_grad: Option<Vec<f64>>,
    pub terms: TermValues,
}

fn add_box_grad(grad: &mut [f64], preds: &DensePrediction, cell: usize, d_box: &[f64], k: f64) {
    let jac = decode_jacobian(preds.distances(cell), preds.angle(cell));
    let base = preds.index(cell, slot::LEFT);
    for j in 0..5 {
        let chain: f64 = (0..5).map(|i| d_box[i] * jac[i][j]).sum();
        grad[base + j] += k * chain;
    }
}

/// Weighted supervised objective of one labeled scene.
///
/// Classification runs over every cell; the other terms over positives or
/// annotated objects. All terms are normalized by the positive count except
/// the angle and overlap terms which are means over their own index sets.
/// The watershed target of a positive cell is that of its annotation.
/// Which terms are active depends on `form`.
pub fn supervised_loss(
    preds: &DensePrediction,
    targets: &PointTargets,
    form: WeakForm,
    weights: &SupervisedWeights,
    aux: &SupervisedAux<'_>,
) -> Result<SupervisedLoss> {
    if preds.height != targets.height
        || preds.width != targets.width
        || preds.num_classes != targets.num_classes
    {
        return Err(Error::shape(
            format!("{}x{}x{}", targets.height, targets.width, targets.num_classes),
            format!("{}x{}x{}", preds.height, preds.width, preds.num_classes),
        ));
    }
    let n_pos = targets.num_positive();
    if n_pos == 0 {
        return Ok(SupervisedLoss {
            loss: LossValue::flagged(preds.len(), Degenerate::EmptyBatch),
            view_grad: aux.symmetry.map(|s| vec![0.0; s.view.len()]),
            terms: TermValues::default(),
        });
    }
    let norm = 1.0 / n_pos as f64;
    let mut grad = vec![0.0; preds.len()];
    let mut terms = TermValues::default();
    let stride = preds.stride();

    // classification and centerness
    for (i, target) in targets.cells.iter().enumerate() {
        for k in 0..preds.num_classes {
            let positive = matches!(target, Some(t) if t.class == k);
            let (v, g) = focal_raw(preds.values[i * stride + k], positive);
            terms.cls += norm * v;
            grad[i * stride + k] += weights.cls * norm * g;
        }
        if let Some(cn) = target.and_then(|t| t.centerness) {
            let idx = preds.index(i, slot::CENTERNESS);
            let (v, g) = bce_raw(preds.values[idx], cn);
            terms.centerness += norm * (v - bernoulli_entropy(cn)).max(0.0);
            grad[idx] += weights.centerness * norm * g;
        }
    }

    // box regression
    if form != WeakForm::Point {
        for (i, target) in targets.cells.iter().enumerate() {
            let Some(t) = target else { continue };
            let pred_box = preds.decode_box(i);
            let loss = match (form, targets.annotations[t.annotation].shape) {
                (WeakForm::RBox, Shape::RBox(gt)) => iou_loss(&pred_box, &gt),
                (WeakForm::HBox, Shape::HBox(gt)) => hbox_iou_loss(&pred_box, &gt),
                (WeakForm::HBox, Shape::RBox(gt)) => hbox_iou_loss(&pred_box, &obb_to_hbox(&gt)),
                _ => continue,
            };
            terms.bbox += norm * loss.value;
            add_box_grad(&mut grad, preds, i, &loss.grad, weights.bbox * norm);
        }
    }

    // orientation consistency between views
    let mut view_grad = aux.symmetry.map(|s| vec![0.0; s.view.len()]);
    if form != WeakForm::RBox {
        if let (Some(pair), Some(vg)) = (aux.symmetry, view_grad.as_mut()) {
            let used: Vec<_> = pair
                .correspondence
                .iter()
                .filter(|(o, _)| targets.cells[*o].is_some())
                .collect();
            if !used.is_empty() {
                let k = 1.0 / used.len() as f64;
                for &&(o, v) in &used {
                    let l = angle_loss(preds.angle(o), pair.view.angle(v), pair.transform);
                    terms.angle += k * l.value;
                    grad[preds.index(o, slot::ANGLE)] += weights.angle * k * l.grad[0];
                    vg[pair.view.index(v, slot::ANGLE)] += weights.angle * k * l.grad[1];
                }
            }
        }
    }

    // scale bounds for point labels
    if form == WeakForm::Point && !aux.objects.is_empty() {
        let boxes: Vec<OrientedBox> = aux.objects.iter().map(|o| preds.decode_box(o.cell)).collect();
        let overlap = gaussian_overlap_loss(&boxes, aux.overlap_norm)?;
        terms.overlap = overlap.value;
        for (n, obj) in aux.objects.iter().enumerate() {
            add_box_grad(&mut grad, preds, obj.cell, &overlap.grad[5 * n..5 * n + 5], weights.overlap);
        }
        for (i, target) in targets.cells.iter().enumerate() {
            let Some(t) = target else { continue };
            let Some(wh) = aux.objects.get(t.annotation).and_then(|o| o.scale_target) else {
                continue;
            };
            let l = watershed_scale_loss(&preds.decode_box(i), wh, aux.gwd_transform)?;
            terms.watershed += norm * l.value;
            let [dw, dh] = [l.grad[0], l.grad[1]];
            let base = preds.index(i, slot::LEFT);
            let kk = weights.watershed * norm;
            grad[base] += kk * dw;
            grad[base + 2] += kk * dw;
            grad[base + 1] += kk * dh;
            grad[base + 3] += kk * dh;
        }
    }

    let value = weights.cls * terms.cls
        + weights.centerness * terms.centerness
        + weights.bbox * terms.bbox
        + weights.angle * terms.angle
        + weights.overlap * terms.overlap
        + weights.watershed * terms.watershed;
    Ok(SupervisedLoss {
        loss: LossValue::new(value, grad),
        view_grad,
        terms,
    })
}
