use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::{slot, DensePrediction};
use crate::error::{Error, Result};
use crate::geometry::normalize_angle;
use crate::losses::PROB_EPS;
use crate::rng::Rng;
use crate::scenes::FeatureGrid;

/// Lower bound on the squared norm of the angle logit pair.
const ANGLE_NORM_FLOOR: f64 = 1e-12;

/// Linear dense detector: every output of every cell is an affine function
/// of that cell's features.
///
/// Heads, in order: `C` class logits, centerness, four log-distances and an
/// angle pair `(z_c, z_s)` decoded as `atan2(z_s, z_c) / 2`. Each head owns
/// `F` weights followed by a bias in [`ToyDetector::params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDetector {
    pub num_features: usize,
    pub num_classes: usize,
    pub cell_size: f64,
    pub params: Vec<f64>,
}

impl ToyDetector {
    pub fn num_heads(num_classes: usize) -> usize {
        num_classes + slot::COUNT + 1
    }

    pub fn num_params(num_features: usize, num_classes: usize) -> usize {
        Self::num_heads(num_classes) * (num_features + 1)
    }

    /// All parameters zero.
    pub fn zeros(num_features: usize, num_classes: usize, cell_size: f64) -> Self {
        Self {
            num_features,
            num_classes,
            cell_size,
            params: vec![0.0; Self::num_params(num_features, num_classes)],
        }
    }

    /// Zero weights with biases giving class probability 0.01, distances of
    /// four cells and angle zero.
    pub fn initialized(num_features: usize, num_classes: usize, cell_size: f64) -> Self {
        let mut d = Self::zeros(num_features, num_classes, cell_size);
        for k in 0..num_classes {
            *d.bias_mut(k) = -(99.0f64).ln();
        }
        for j in 0..4 {
            *d.bias_mut(num_classes + slot::LEFT + j) = 4.0f64.ln();
        }
        *d.bias_mut(num_classes + slot::ANGLE) = 1.0;
        d
    }

    /// Standard-normal parameters scaled by `scale`.
    pub fn random(num_features: usize, num_classes: usize, cell_size: f64, scale: f64, rng: &mut Rng) -> Self {
        let mut d = Self::zeros(num_features, num_classes, cell_size);
        for p in &mut d.params {
            *p = scale * rng.sample::<f64, _>(StandardNormal);
        }
        d
    }

    fn bias_mut(&mut self, head: usize) -> &mut f64 {
        let f = self.num_features;
        &mut self.params[head * (f + 1) + f]
    }

    fn heads(&self, x: &[f64], z: &mut [f64]) {
        let f = self.num_features;
        for (h, out) in z.iter_mut().enumerate() {
            let w = &self.params[h * (f + 1)..(h + 1) * (f + 1)];
            *out = w[f] + w[..f].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn check(&self, features: &FeatureGrid) -> Result<()> {
        if features.channels != self.num_features {
            return Err(Error::shape(
                format!("{} feature channels", self.num_features),
                format!("{} feature channels", features.channels),
            ));
        }
        if self.params.len() != Self::num_params(self.num_features, self.num_classes) {
            return Err(Error::shape(
                Self::num_params(self.num_features, self.num_classes),
                self.params.len(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, features: &FeatureGrid) -> Result<DensePrediction> {
        self.check(features)?;
        let c = self.num_classes;
        let mut pred = DensePrediction::zeros(features.height, features.width, c);
        pred.cell_size = self.cell_size;
        let mut z = vec![0.0; Self::num_heads(c)];
        for i in 0..features.num_cells() {
            self.heads(features.cell(i), &mut z);
            let out = pred.cell_mut(i);
            for k in 0..=c {
                out[k] = sigmoid(z[k]);
            }
            for j in 0..4 {
                out[c + slot::LEFT + j] = z[c + slot::LEFT + j].exp() * self.cell_size;
            }
            out[c + slot::ANGLE] = normalize_angle(0.5 * z[c + slot::ANGLE + 1].atan2(z[c + slot::ANGLE]));
        }
        Ok(pred)
    }

    /// Parameter gradient given the gradient of a loss with respect to the
    /// values of `pred = self.forward(features)`.
    pub fn backward(&self, features: &FeatureGrid, pred: &DensePrediction, grad: &[f64]) -> Result<Vec<f64>> {
        self.check(features)?;
        if grad.len() != pred.len() || pred.num_cells() != features.num_cells() {
            return Err(Error::shape(pred.len(), grad.len()));
        }
        let c = self.num_classes;
        let f = self.num_features;
        let heads = Self::num_heads(c);
        let stride = pred.stride();
        let mut out = vec![0.0; self.params.len()];
        let mut z = vec![0.0; heads];
        let mut dz = vec![0.0; heads];
        for i in 0..features.num_cells() {
            let g = &grad[i * stride..(i + 1) * stride];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let v = pred.cell(i);
            for k in 0..=c {
                dz[k] = g[k] * v[k] * (1.0 - v[k]);
            }
            for j in 0..4 {
                dz[c + slot::LEFT + j] = g[c + slot::LEFT + j] * v[c + slot::LEFT + j];
            }
            let ga = g[c + slot::ANGLE];
            if ga != 0.0 {
                self.heads(features.cell(i), &mut z);
                let (zc, zs) = (z[c + slot::ANGLE], z[c + slot::ANGLE + 1]);
                let r2 = (zc * zc + zs * zs).max(ANGLE_NORM_FLOOR);
                dz[c + slot::ANGLE] = -0.5 * ga * zs / r2;
                dz[c + slot::ANGLE + 1] = 0.5 * ga * zc / r2;
            } else {
                dz[c + slot::ANGLE] = 0.0;
                dz[c + slot::ANGLE + 1] = 0.0;
            }
            let x = features.cell(i);
            for (h, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut out[h * (f + 1)..(h + 1) * (f + 1)];
                for (o, xv) in row[..f].iter_mut().zip(x) {
                    *o += d * xv;
                }
                row[f] += d;
            }
        }
        Ok(out)
    }
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}
