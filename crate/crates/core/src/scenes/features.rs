use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of per-cell feature channels produced by [`extract_features`].
pub const NUM_FEATURES: usize = 12;

/// Regularizer of the orientation features; gradient energy well below it
/// gives an orientation vector near zero.
const ORIENTATION_EPS: f64 = 0.05;

/// Cell-major grid of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Standard deviation of every channel over the grid.
    pub fn channel_std(&self) -> Vec<f64> {
        let n = self.num_cells() as f64;
        (0..self.channels)
            .map(|k| {
                let mean = (0..self.num_cells()).map(|i| self.cell(i)[k]).sum::<f64>() / n;
                let var = (0..self.num_cells())
                    .map(|i| (self.cell(i)[k] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                var.sqrt()
            })
            .collect()
    }
}

/// Summed-area table for clamped box filtering.
struct Integral {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

impl Integral {
    fn new(values: &[f64], height: usize, width: usize) -> Self {
        let mut table = vec![0.0; (height + 1) * (width + 1)];
        for r in 0..height {
            let mut row = 0.0;
            for c in 0..width {
                row += values[r * width + c];
                table[(r + 1) * (width + 1) + c + 1] = table[r * (width + 1) + c + 1] + row;
            }
        }
        Self {
            width,
            height,
            table,
        }
    }

    /// Mean over the `(2k+1)^2` window around `(r, c)`, clipped to the grid.
    fn mean(&self, r: usize, c: usize, k: usize) -> f64 {
        let r0 = r.saturating_sub(k);
        let c0 = c.saturating_sub(k);
        let r1 = (r + k + 1).min(self.height);
        let c1 = (c + k + 1).min(self.width);
        let w = self.width + 1;
        let sum = self.table[r1 * w + c1] - self.table[r0 * w + c1] - self.table[r1 * w + c0]
            + self.table[r0 * w + c0];
        sum / ((r1 - r0) * (c1 - c0)) as f64
    }
}

fn box_mean(values: &[f64], height: usize, width: usize, k: usize) -> Vec<f64> {
    let ii = Integral::new(values, height, width);
    (0..height * width)
        .map(|i| ii.mean(i / width, i % width, k))
        .collect()
}

/// Sobel gradients with replicated borders.
fn sobel(values: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, height as isize - 1) as usize;
        let c = c.clamp(0, width as isize - 1) as usize;
        values[r * width + c]
    };
    let mut gx = vec![0.0; height * width];
    let mut gy = vec![0.0; height * width];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let i = r as usize * width + c as usize;
            gx[i] = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r, c - 1)
                - at(r + 1, c - 1))
                / 8.0;
            gy[i] = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r - 1, c)
                - at(r - 1, c + 1))
                / 8.0;
        }
    }
    (gx, gy)
}

/// Edge magnitude of the 3x3-smoothed intensity; used as watershed elevation.
pub fn edge_map(intensity: &[f64], height: usize, width: usize) -> Vec<f64> {
    let smooth = box_mean(intensity, height, width, 1);
    let (gx, gy) = sobel(&smooth, height, width);
    gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect()
}

/// Hand-crafted per-cell features of an intensity grid:
///
/// | channels | content |
/// |---|---|
/// | 0, 1 | 3x3 mean and its square |
/// | 2, 3 | 7x7 and 15x15 means |
/// | 4, 5 | 7x7 and 15x15 standard deviations |
/// | 6, 7 | edge magnitude and its 7x7 mean |
/// | 8, 9 | orientation `(cos 2phi, sin 2phi)` of the 15x15 structure tensor |
/// | 10, 11 | the same at 7x7 |
///
/// The orientation channels rotate by `2R` when the image rotates by `R`.
pub fn extract_features(intensity: &[f64], height: usize, width: usize) -> Result<FeatureGrid> {
    if intensity.len() != height * width {
        return Err(Error::shape(height * width, intensity.len()));
    }
    let n = height * width;
    let m3 = box_mean(intensity, height, width, 1);
    let m7 = box_mean(intensity, height, width, 3);
    let m15 = box_mean(intensity, height, width, 7);
    let sq: Vec<f64> = intensity.iter().map(|v| v * v).collect();
    let s7 = box_mean(&sq, height, width, 3);
    let s15 = box_mean(&sq, height, width, 7);
    let (gx, gy) = sobel(&m3, height, width);
    let edge: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let e7 = box_mean(&edge, height, width, 3);
    let jxx: Vec<f64> = gx.iter().map(|g| g * g).collect();
    let jyy: Vec<f64> = gy.iter().map(|g| g * g).collect();
    let jxy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
    let orient = |k: usize| {
        let (xx, yy, xy) = (
            box_mean(&jxx, height, width, k),
            box_mean(&jyy, height, width, k),
            box_mean(&jxy, height, width, k),
        );
        (0..n)
            .map(|i| {
                let den = xx[i] + yy[i] + ORIENTATION_EPS * ORIENTATION_EPS;
                ((xx[i] - yy[i]) / den, 2.0 * xy[i] / den)
            })
            .collect::<Vec<_>>()
    };
    let o15 = orient(7);
    let o7 = orient(3);

    let mut grid = FeatureGrid::zeros(height, width, NUM_FEATURES);
    for i in 0..n {
        let f = grid.cell_mut(i);
        f[0] = m3[i];
        f[1] = m3[i] * m3[i];
        f[2] = m7[i];
        f[3] = m15[i];
        f[4] = (s7[i] - m7[i] * m7[i]).max(0.0).sqrt();
        f[5] = (s15[i] - m15[i] * m15[i]).max(0.0).sqrt();
        f[6] = edge[i];
        f[7] = e7[i];
        f[8] = o15[i].0;
        f[9] = o15[i].1;
        f[10] = o7[i].0;
        f[11] = o7[i].1;
    }
    Ok(grid)
}

/// Per-channel affine standardization fitted on a set of grids. Orientation
/// channels are scaled but not centered so that sign flips stay sign flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    pub fn fit<'a>(grids: impl IntoIterator<Item = &'a FeatureGrid>) -> Self {
        let mut sum = Vec::new();
        let mut sq = Vec::new();
        let mut count = 0usize;
        for g in grids {
            if sum.is_empty() {
                sum = vec![0.0; g.channels];
                sq = vec![0.0; g.channels];
            }
            for i in 0..g.num_cells() {
                for (k, v) in g.cell(i).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += g.num_cells();
        }
        let n = count.max(1) as f64;
        let mut mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = mean
            .iter()
            .zip(&sq)
            .map(|(m, s)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        for k in 8..mean.len().min(NUM_FEATURES) {
            mean[k] = 0.0;
        }
        Self { mean, scale }
    }

    pub fn apply(&self, grid: &mut FeatureGrid) {
        for i in 0..grid.num_cells() {
            for (k, v) in grid.cell_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[k]) * self.scale[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_image_has_no_edges_or_orientation() {
        let g = extract_features(&vec![0.5; 100], 10, 10).unwrap();
        for i in 0..100 {
            let f = g.cell(i);
            assert!((f[0] - 0.5).abs() < 1e-12);
            assert!(f[6].abs() < 1e-12);
            assert!(f[8].abs() < 1e-12 && f[9].abs() < 1e-12);
        }
    }

    #[test]
    fn orientation_flips_sign_under_vertical_flip() {
        let (h, w) = (16, 16);
        // a diagonal ramp
        let img: Vec<f64> = (0..h * w)
            .map(|i| ((i / w) as f64 + 0.5 * (i % w) as f64) / 20.0)
            .collect();
        let flipped: Vec<f64> = (0..h * w)
            .map(|i| img[(h - 1 - i / w) * w + i % w])
            .collect();
        let a = extract_features(&img, h, w).unwrap();
        let b = extract_features(&flipped, h, w).unwrap();
        let (r, c) = (8, 8);
        let fa = a.cell(r * w + c);
        let fb = b.cell((h - 1 - r) * w + c);
        assert!((fa[8] - fb[8]).abs() < 1e-9);
        assert!((fa[9] + fb[9]).abs() < 1e-9);
        assert!(fa[9].abs() > 0.1);
    }
}
