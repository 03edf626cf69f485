//! Per-cell detector output on a single feature level.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, OrientedBox};

/// Offsets inside one cell's record, after the `C` class probabilities.
pub mod slot {
    pub const CENTERNESS: usize = 0;
    pub const LEFT: usize = 1;
    pub const TOP: usize = 2;
    pub const RIGHT: usize = 3;
    pub const BOTTOM: usize = 4;
    pub const ANGLE: usize = 5;
    pub const COUNT: usize = 6;
}

/// Dense prediction over an `H x W` grid.
///
/// Each cell stores `C + 6` values: class probabilities, centerness, the
/// distances `(l, t, r, b)` from the cell center to the box sides measured in
/// the box frame, and the box angle. Loss gradients use the same flat layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensePrediction {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub cell_size: f64,
    pub values: Vec<f64>,
}

impl DensePrediction {
    pub fn zeros(height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            num_classes,
            cell_size: 1.0,
            values: vec![0.0; height * width * (num_classes + slot::COUNT)],
        }
    }

    pub fn stride(&self) -> usize {
        self.num_classes + slot::COUNT
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.values[i * s..(i + 1) * s]
    }

    /// Flat index of slot `k` (see [`slot`]) of cell `i`.
    pub fn index(&self, i: usize, k: usize) -> usize {
        i * self.stride() + self.num_classes + k
    }

    pub fn class_probs(&self, i: usize) -> &[f64] {
        &self.cell(i)[..self.num_classes]
    }

    pub fn centerness(&self, i: usize) -> f64 {
        self.values[self.index(i, slot::CENTERNESS)]
    }

    pub fn distances(&self, i: usize) -> [f64; 4] {
        let base = self.index(i, slot::LEFT);
        [
            self.values[base],
            self.values[base + 1],
            self.values[base + 2],
            self.values[base + 3],
        ]
    }

    pub fn angle(&self, i: usize) -> f64 {
        self.values[self.index(i, slot::ANGLE)]
    }

    pub fn cell_center(&self, i: usize) -> [f64; 2] {
        cell_center(i, self.width, self.cell_size)
    }

    /// Best class and its probability.
    pub fn top_class(&self, i: usize) -> (usize, f64) {
        self.class_probs(i)
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, p)| {
                if p > best.1 {
                    (k, p)
                } else {
                    best
                }
            })
    }

    /// Confidence used for filtering and ranking: top class probability times
    /// centerness.
    pub fn score(&self, i: usize) -> f64 {
        self.top_class(i).1 * self.centerness(i)
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.num_cells()).map(|i| self.score(i)).collect()
    }

    pub fn decode_box(&self, i: usize) -> OrientedBox {
        decode_box(self.cell_center(i), self.distances(i), self.angle(i))
    }
}

pub fn cell_center(i: usize, width: usize, cell_size: f64) -> [f64; 2] {
    let (r, c) = (i / width, i % width);
    [(c as f64 + 0.5) * cell_size, (r as f64 + 0.5) * cell_size]
}

/// Box implied by distances `(l, t, r, b)` from `center` taken in the frame
/// rotated by `angle`.
pub fn decode_box(center: [f64; 2], d: [f64; 4], angle: f64) -> OrientedBox {
    let [l, t, r, b] = d;
    let (s, c) = angle.sin_cos();
    let (u, v) = (0.5 * (r - l), 0.5 * (b - t));
    OrientedBox::new(
        center[0] + c * u - s * v,
        center[1] + s * u + c * v,
        l + r,
        t + b,
        normalize_angle(angle),
    )
}

/// Jacobian of `(cx, cy, w, h, theta)` of [`decode_box`] with respect to
/// `(l, t, r, b, angle)`.
pub fn decode_jacobian(d: [f64; 4], angle: f64) -> [[f64; 5]; 5] {
    let [l, t, r, b] = d;
    let (s, c) = angle.sin_cos();
    let (u, v) = (0.5 * (r - l), 0.5 * (b - t));
    [
        [-0.5 * c, 0.5 * s, 0.5 * c, -0.5 * s, -s * u - c * v],
        [-0.5 * s, -0.5 * c, 0.5 * s, 0.5 * c, c * u - s * v],
        [1.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ]
}
