use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotation::{Shape, WeakAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{HBox, OrientedBox};
use crate::losses::ViewTransform;
use crate::rng::Rng;
use crate::scale_targets::cell_of;
use crate::scenes::{extract_features, FeatureGrid, FeatureNormalizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentMode {
    Weak,
    Strong,
}

/// Strength of the strong augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongAugment {
    /// Noise standard deviation as a fraction of each channel's deviation.
    pub noise: f64,
    /// Largest erased fraction of the grid; zero disables erasing.
    pub max_erase: f64,
}

impl Default for StrongAugment {
    fn default() -> Self {
        Self {
            noise: 0.1,
            max_erase: 0.2,
        }
    }
}

/// Weak mode returns the input. Strong mode adds per-channel Gaussian noise
/// and zeroes one random rectangle of at most `max_erase` of the cells.
pub fn augment(features: &FeatureGrid, mode: AugmentMode, params: &StrongAugment, rng: &mut Rng) -> FeatureGrid {
    let mut out = features.clone();
    if mode == AugmentMode::Weak {
        return out;
    }
    if params.noise > 0.0 {
        let std = features.channel_std();
        for i in 0..out.num_cells() {
            for (v, s) in out.cell_mut(i).iter_mut().zip(&std) {
                *v += params.noise * s * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    if params.max_erase > 0.0 {
        let (h, w) = (out.height, out.width);
        let budget = (params.max_erase * (h * w) as f64).floor() as usize;
        if budget >= 1 {
            let ew = rng.random_range(1..=w.min(budget));
            let eh = rng.random_range(1..=h.min(budget / ew));
            let r0 = rng.random_range(0..=h - eh);
            let c0 = rng.random_range(0..=w - ew);
            for r in r0..r0 + eh {
                for c in c0..c0 + ew {
                    out.cell_mut(r * w + c).fill(0.0);
                }
            }
        }
    }
    out
}

/// A transformed view of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryView {
    pub intensity: Vec<f64>,
    pub features: FeatureGrid,
    /// `(original cell, view cell)` pairs.
    pub correspondence: Vec<(usize, usize)>,
    pub annotations: Vec<WeakAnnotation>,
}

fn rotate_about(p: [f64; 2], c: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, co) = angle.sin_cos();
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy]
}

fn transform_annotation(a: &WeakAnnotation, trans: ViewTransform, height: f64, pivot: [f64; 2]) -> WeakAnnotation {
    let shape = match (trans, a.shape) {
        (ViewTransform::Flip, Shape::RBox(b)) => Shape::RBox(OrientedBox::new(b.cx, height - b.cy, b.w, b.h, -b.theta)),
        (ViewTransform::Flip, Shape::HBox(b)) => Shape::HBox(HBox::new(b.xmin, height - b.ymax, b.xmax, height - b.ymin)),
        (ViewTransform::Flip, Shape::Point { x, y }) => Shape::Point { x, y: height - y },
        (ViewTransform::Rotate(r), Shape::RBox(b)) => Shape::RBox(b.rigid_transform(r, pivot, [0.0, 0.0])),
        // a rotated axis-aligned box is no longer axis-aligned
        (ViewTransform::Rotate(r), Shape::HBox(b)) => Shape::RBox(b.to_obb().rigid_transform(r, pivot, [0.0, 0.0])),
        (ViewTransform::Rotate(r), Shape::Point { x, y }) => {
            let [x, y] = rotate_about([x, y], pivot, r);
            Shape::Point { x, y }
        }
    };
    WeakAnnotation { class: a.class, shape }
}

/// Transforms the intensity grid (vertical flip, or nearest-neighbour
/// rotation about the grid center with zero fill), recomputes and
/// standardizes its features, and maps cells and labels into the view.
pub fn symmetry_view(
    intensity: &[f64],
    height: usize,
    width: usize,
    annotations: &[WeakAnnotation],
    trans: ViewTransform,
    normalizer: &FeatureNormalizer,
) -> Result<SymmetryView> {
    if intensity.len() != height * width {
        return Err(Error::shape(height * width, intensity.len()));
    }
    let center = |i: usize| [(i % width) as f64 + 0.5, (i / width) as f64 + 0.5];
    let pivot = [width as f64 / 2.0, height as f64 / 2.0];
    let n = height * width;
    let (view, correspondence) = match trans {
        ViewTransform::Flip => {
            let flip = |i: usize| (height - 1 - i / width) * width + i % width;
            let view: Vec<f64> = (0..n).map(|i| intensity[flip(i)]).collect();
            (view, (0..n).map(|i| (i, flip(i))).collect())
        }
        ViewTransform::Rotate(r) => {
            let view: Vec<f64> = (0..n)
                .map(|v| cell_of(rotate_about(center(v), pivot, -r), height, width).map_or(0.0, |o| intensity[o]))
                .collect();
            let corr = (0..n)
                .filter_map(|o| cell_of(rotate_about(center(o), pivot, r), height, width).map(|v| (o, v)))
                .collect();
            (view, corr)
        }
    };
    let mut features = extract_features(&view, height, width)?;
    normalizer.apply(&mut features);
    let annotations = annotations
        .iter()
        .map(|a| transform_annotation(a, trans, height as f64, pivot))
        .collect();
    Ok(SymmetryView {
        intensity: view,
        features,
        correspondence,
        annotations,
    })
}

/// Teacher parameters and their averaging momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub teacher: Vec<f64>,
    pub momentum: f64,
}

/// `teacher <- m * teacher + (1 - m) * student`.
pub fn ema_update(state: &EmaState, student: &[f64]) -> Result<EmaState> {
    if state.teacher.len() != student.len() {
        return Err(Error::shape(state.teacher.len(), student.len()));
    }
    let m = state.momentum;
    Ok(EmaState {
        teacher: state
            .teacher
            .iter()
            .zip(student)
            .map(|(t, s)| m * t + (1.0 - m) * s)
            .collect(),
        momentum: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use std::f64::consts::FRAC_PI_2;

    fn ramp(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| (i as f64 * 0.37).sin()).collect()
    }

    #[test]
    fn weak_is_identity_and_strong_is_seeded() {
        let mut g = FeatureGrid::zeros(8, 8, 3);
        for (k, v) in g.data.iter_mut().enumerate() {
            *v = (k as f64).cos();
        }
        let p = StrongAugment::default();
        assert_eq!(augment(&g, AugmentMode::Weak, &p, &mut rng_from(0)), g);
        let off = StrongAugment {
            noise: 0.0,
            max_erase: 0.0,
        };
        assert_eq!(augment(&g, AugmentMode::Strong, &off, &mut rng_from(0)), g);
        let a = augment(&g, AugmentMode::Strong, &p, &mut rng_from(4));
        let b = augment(&g, AugmentMode::Strong, &p, &mut rng_from(4));
        assert_eq!(a, b);
        assert_ne!(a, g);
    }

    #[test]
    fn erase_respects_budget() {
        let g = FeatureGrid {
            data: vec![1.0; 64 * 64 * 2],
            ..FeatureGrid::zeros(64, 64, 2)
        };
        let p = StrongAugment {
            noise: 0.0,
            max_erase: 0.2,
        };
        let mut rng = rng_from(8);
        for _ in 0..100 {
            let out = augment(&g, AugmentMode::Strong, &p, &mut rng);
            let erased = (0..out.num_cells()).filter(|&i| out.cell(i)[0] == 0.0).count();
            assert!(erased >= 1 && erased as f64 <= 0.2 * 4096.0);
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let (h, w) = (6, 5);
        let img = ramp(h, w);
        let id = FeatureNormalizer::identity(crate::scenes::NUM_FEATURES);
        let once = symmetry_view(&img, h, w, &[], ViewTransform::Flip, &id).unwrap();
        let twice = symmetry_view(&once.intensity, h, w, &[], ViewTransform::Flip, &id).unwrap();
        assert_eq!(twice.intensity, img);
        for &(o, v) in &once.correspondence {
            let back = twice.correspondence[v].1;
            assert_eq!(back, o);
        }
    }

    #[test]
    fn quarter_turn_is_a_permutation() {
        let n = 10;
        let img = ramp(n, n);
        let id = FeatureNormalizer::identity(crate::scenes::NUM_FEATURES);
        let v = symmetry_view(&img, n, n, &[], ViewTransform::Rotate(FRAC_PI_2), &id).unwrap();
        assert_eq!(v.correspondence.len(), n * n);
        let mut targets: Vec<usize> = v.correspondence.iter().map(|c| c.1).collect();
        targets.sort();
        targets.dedup();
        assert_eq!(targets.len(), n * n);
        for &(o, t) in &v.correspondence {
            assert_eq!(v.intensity[t], img[o]);
        }
    }

    #[test]
    fn small_rotation_coverage() {
        let n = 64;
        let id = FeatureNormalizer::identity(crate::scenes::NUM_FEATURES);
        let v = symmetry_view(&vec![0.0; n * n], n, n, &[], ViewTransform::Rotate(0.3), &id).unwrap();
        assert!(v.correspondence.len() as f64 >= 0.6 * (n * n) as f64);
    }

    #[test]
    fn labels_follow_the_view() {
        let b = OrientedBox::new(6.0, 3.0, 4.0, 2.0, 0.2);
        let anns = [WeakAnnotation::rbox(0, b), WeakAnnotation::point(0, [6.0, 3.0])];
        let id = FeatureNormalizer::identity(crate::scenes::NUM_FEATURES);
        let img = vec![0.0; 100];
        let f = symmetry_view(&img, 10, 10, &anns, ViewTransform::Flip, &id).unwrap();
        assert_eq!(f.annotations[0].shape, Shape::RBox(OrientedBox::new(6.0, 7.0, 4.0, 2.0, -0.2)));
        assert_eq!(f.annotations[1].anchor(), [6.0, 7.0]);
        let r = symmetry_view(&img, 10, 10, &anns, ViewTransform::Rotate(FRAC_PI_2), &id).unwrap();
        let Shape::RBox(rb) = r.annotations[0].shape else { unreachable!() };
        assert!((rb.cx - 7.0).abs() < 1e-12 && (rb.cy - 6.0).abs() < 1e-12);
        assert!((rb.theta - (0.2 + FRAC_PI_2 - std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn ema_endpoints() {
        let s = EmaState {
            teacher: vec![0.0, 4.0],
            momentum: 0.0,
        };
        assert_eq!(ema_update(&s, &[2.0, 2.0]).unwrap().teacher, vec![2.0, 2.0]);
        let frozen = EmaState { momentum: 1.0, ..s.clone() };
        assert_eq!(ema_update(&frozen, &[2.0, 2.0]).unwrap().teacher, vec![0.0, 4.0]);
        let half = EmaState { momentum: 0.5, ..s.clone() };
        assert_eq!(ema_update(&half, &[2.0, 2.0]).unwrap().teacher, vec![1.0, 3.0]);
        assert!(matches!(ema_update(&s, &[1.0]), Err(Error::ShapeMismatch { .. })));
    }
}
