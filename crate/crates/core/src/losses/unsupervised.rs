use super::{bce_raw, bernoulli_entropy, smooth_l1_raw, Degenerate, LossValue, SMOOTH_L1_BETA};
use crate::cpf::ActiveSet;
use crate::dense::{slot, DensePrediction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UnsupervisedLoss {
    /// Gradient with respect to the student prediction.
    pub loss: LossValue,
    /// Value the classification and centerness terms take when the student
    /// reproduces the teacher exactly. `loss.value - target_entropy` is the
    /// excess over that minimum.
    pub target_entropy: f64,
}

/// Score-weighted distillation of teacher predictions into the student on
/// the active cells: cross-entropy on class and centerness, smooth L1 on the
/// box logits `ln l, ln t, ln r, ln b`. Normalized by the sum of weights.
pub fn unsupervised_loss(
    teacher: &DensePrediction,
    student: &DensePrediction,
    active: &ActiveSet,
) -> Result<UnsupervisedLoss> {
    if teacher.height != student.height
        || teacher.width != student.width
        || teacher.num_classes != student.num_classes
    {
        return Err(Error::shape(
            format!("{}x{}", teacher.height, teacher.width),
            format!("{}x{}", student.height, student.width),
        ));
    }
    let total_weight: f64 = active.weights.iter().sum();
    if active.cells.is_empty() || total_weight <= 0.0 {
        return Ok(UnsupervisedLoss {
            loss: LossValue::flagged(student.len(), Degenerate::EmptyActiveSet),
            target_entropy: 0.0,
        });
    }
    let mut grad = vec![0.0; student.len()];
    let mut value = 0.0;
    let mut entropy = 0.0;
    let stride = student.stride();
    for (&cell, &omega) in active.cells.iter().zip(&active.weights) {
        let k = omega / total_weight;
        let base = cell * stride;
        for c in 0..=student.num_classes {
            // the class probabilities are followed directly by centerness
            let idx = base + c;
            let t = teacher.values[idx];
            let (v, g) = bce_raw(student.values[idx], t);
            value += k * v;
            entropy += k * bernoulli_entropy(t);
            grad[idx] += k * g;
        }
        let d0 = student.index(cell, slot::LEFT);
        for j in 0..4 {
            let d = student.values[d0 + j];
            let (v, g) = smooth_l1_raw(d.ln() - teacher.values[d0 + j].ln(), SMOOTH_L1_BETA);
            value += k * v;
            grad[d0 + j] += k * g / d;
        }
    }
    Ok(UnsupervisedLoss {
        loss: LossValue::new(value, grad),
        target_entropy: entropy,
    })
}
