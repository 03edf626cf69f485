use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue admitted in a covariance matrix.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self {
            xx: a,
            xy: 0.0,
            yy: b,
        }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            xx: k * self.xx,
            xy: k * self.xy,
            yy: k * self.yy,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            yy: self.yy + o.yy,
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        Some(Self {
            xx: self.yy / det,
            xy: -self.xy / det,
            yy: self.xx / det,
        })
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }

    /// Eigenvalues (descending) and the angle of the first eigenvector.
    pub fn eigen(&self) -> (f64, f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = half_diff.hypot(self.xy);
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        (mean + radius, mean - radius, angle)
    }

    fn from_eigen(l1: f64, l2: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            xx: l1 * c * c + l2 * s * s,
            xy: (l1 - l2) * c * s,
            yy: l1 * s * s + l2 * c * c,
        }
    }

    /// Clamps both eigenvalues to at least `floor`; unchanged if already valid.
    pub fn floored(&self, floor: f64) -> Self {
        let (l1, l2, angle) = self.eigen();
        if l2 >= floor {
            return *self;
        }
        Self::from_eigen(l1.max(floor), l2.max(floor), angle)
    }

    /// Principal square root of a positive semi-definite matrix.
    pub fn sqrt(&self) -> Self {
        let (l1, l2, angle) = self.eigen();
        Self::from_eigen(l1.max(0.0).sqrt(), l2.max(0.0).sqrt(), angle)
    }

    /// `self * m * self`, which stays symmetric.
    pub fn sandwich(&self, m: &Sym2) -> Self {
        // p = self * m (general), result = p * self
        let p = [
            [
                self.xx * m.xx + self.xy * m.xy,
                self.xx * m.xy + self.xy * m.yy,
            ],
            [
                self.xy * m.xx + self.yy * m.xy,
                self.xy * m.xy + self.yy * m.yy,
            ],
        ];
        let xx = p[0][0] * self.xx + p[0][1] * self.xy;
        let xy_a = p[0][0] * self.xy + p[0][1] * self.yy;
        let xy_b = p[1][0] * self.xx + p[1][1] * self.xy;
        let yy = p[1][0] * self.xy + p[1][1] * self.yy;
        Self {
            xx,
            xy: 0.5 * (xy_a + xy_b),
            yy,
        }
    }

    fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}

/// Two-dimensional Gaussian distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2 {
    pub mu: [f64; 2],
    pub sigma: Sym2,
}

impl Gaussian2 {
    pub fn new(mu: [f64; 2], sigma: Sym2) -> Self {
        Self { mu, sigma }
    }

    /// Density at `x`.
    pub fn pdf(&self, x: [f64; 2]) -> f64 {
        let inv = self.sigma.inverse().expect("singular covariance");
        let d = [x[0] - self.mu[0], x[1] - self.mu[1]];
        let y = inv.apply(d);
        let q = d[0] * y[0] + d[1] * y[1];
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * self.sigma.det().sqrt())
    }

    fn floored(&self) -> Result<Self> {
        if !self.sigma.is_finite() || !self.mu.iter().all(|m| m.is_finite()) {
            return Err(Error::SingularCovariance { det: f64::NAN });
        }
        Ok(Self {
            mu: self.mu,
            sigma: self.sigma.floored(VARIANCE_FLOOR),
        })
    }
}

/// Partials of the Bhattacharyya coefficient. Covariance partials are with
/// respect to the independent entries `(xx, xy, yy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BhattacharyyaGrad {
    pub value: f64,
    pub d_mu_a: [f64; 2],
    pub d_sigma_a: [f64; 3],
    pub d_mu_b: [f64; 2],
    pub d_sigma_b: [f64; 3],
}

/// `exp(-D_B)` for two Gaussians, a value in `[0, 1]`.
pub fn bhattacharyya_coefficient(a: &Gaussian2, b: &Gaussian2) -> Result<f64> {
    bhattacharyya_with_grad(a, b).map(|g| g.value)
}

pub fn bhattacharyya_with_grad(a: &Gaussian2, b: &Gaussian2) -> Result<BhattacharyyaGrad> {
    let (a, b) = (a.floored()?, b.floored()?);
    let mean = a.sigma.add(&b.sigma).scale(0.5);
    let det_mean = mean.det();
    if !(det_mean >= VARIANCE_FLOOR * VARIANCE_FLOOR) {
        return Err(Error::SingularCovariance { det: det_mean });
    }
    let (det_a, det_b) = (a.sigma.det(), b.sigma.det());
    let inv = mean.inverse().ok_or(Error::SingularCovariance { det: det_mean })?;
    let d = [a.mu[0] - b.mu[0], a.mu[1] - b.mu[1]];
    let y = inv.apply(d);
    let quad = d[0] * y[0] + d[1] * y[1];
    let distance = quad / 8.0 + 0.5 * (det_mean / (det_a * det_b).sqrt()).ln();
    let value = (-distance).exp().min(1.0);

    // dD/d(mean entries)
    let d_s = [
        -y[0] * y[0] / 8.0 + 0.5 * mean.yy / det_mean,
        -2.0 * y[0] * y[1] / 8.0 - mean.xy / det_mean,
        -y[1] * y[1] / 8.0 + 0.5 * mean.xx / det_mean,
    ];
    let logdet_grad = |s: &Sym2, det: f64| [s.yy / det, -2.0 * s.xy / det, s.xx / det];
    let la = logdet_grad(&a.sigma, det_a);
    let lb = logdet_grad(&b.sigma, det_b);
    let k = -value;
    Ok(BhattacharyyaGrad {
        value,
        d_mu_a: [k * y[0] / 4.0, k * y[1] / 4.0],
        d_mu_b: [-k * y[0] / 4.0, -k * y[1] / 4.0],
        d_sigma_a: std::array::from_fn(|i| k * (0.5 * d_s[i] - 0.25 * la[i])),
        d_sigma_b: std::array::from_fn(|i| k * (0.5 * d_s[i] - 0.25 * lb[i])),
    })
}

/// Squared 2-Wasserstein distance between two Gaussians.
pub fn gwd_squared(a: &Gaussian2, b: &Gaussian2) -> Result<f64> {
    let (a, b) = (a.floored()?, b.floored()?);
    let root_b = b.sigma.sqrt();
    let cross = root_b.sandwich(&a.sigma).sqrt();
    let dm = (a.mu[0] - b.mu[0]).powi(2) + (a.mu[1] - b.mu[1]).powi(2);
    let d2 = dm + a.sigma.trace() + b.sigma.trace() - 2.0 * cross.trace();
    Ok(d2.max(0.0))
}
