//! Rotated rectangles, axis-aligned boxes, 2-D Gaussians and the overlap
//! measures between them.
//!
//! Angles are measured counter-clockwise from the +x axis to the `w` edge and
//! are kept in `(-pi/2, pi/2]`; a rectangle is unchanged by a half turn.

mod gaussian;
mod polygon;

pub use gaussian::{
    bhattacharyya_coefficient, bhattacharyya_with_grad, gwd_squared, BhattacharyyaGrad, Gaussian2,
    Sym2, VARIANCE_FLOOR,
};
pub use polygon::ConvexPolygon;

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Maps an angle onto `(-pi/2, pi/2]`, preserving it modulo `pi`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta - PI * ((theta - FRAC_PI_2) / PI).ceil();
    // rounding in the subtraction can land a hair outside the interval
    while t <= -FRAC_PI_2 {
        t += PI;
    }
    while t > FRAC_PI_2 {
        t -= PI;
    }
    t
}

/// A rotated rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        debug_assert!(w > 0.0 && h > 0.0, "box sides must be positive: {w} x {h}");
        Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        }
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        let local = [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]];
        local.map(|[u, v]| [self.cx + c * u - s * v, self.cy + s * u + c * v])
    }

    pub fn polygon(&self) -> ConvexPolygon {
        ConvexPolygon::from_ccw(self.corners().to_vec())
    }

    /// Coordinates of `p` in the frame of the box (origin at the center,
    /// first axis along `w`).
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.cx, p[1] - self.cy);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [u, v] = self.to_local(p);
        u.abs() <= self.w / 2.0 && v.abs() <= self.h / 2.0
    }

    /// Radius of the circumscribed circle.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.w.hypot(self.h)
    }

    /// Applies a rotation by `angle` about `pivot` followed by a translation.
    pub fn rigid_transform(&self, angle: f64, pivot: [f64; 2], shift: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let (dx, dy) = (self.cx - pivot[0], self.cy - pivot[1]);
        Self::new(
            pivot[0] + c * dx - s * dy + shift[0],
            pivot[1] + s * dx + c * dy + shift[1],
            self.w,
            self.h,
            self.theta + angle,
        )
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl HBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        debug_assert!(xmin < xmax && ymin < ymax, "degenerate hbox");
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.xmin + self.xmax),
            0.5 * (self.ymin + self.ymax),
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }

    pub fn iou(&self, other: &HBox) -> f64 {
        let iw = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let ih = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// The same rectangle as an unrotated [`OrientedBox`].
    pub fn to_obb(&self) -> OrientedBox {
        let [cx, cy] = self.center();
        OrientedBox::new(cx, cy, self.width(), self.height(), 0.0)
    }
}

/// Gaussian whose mean is the box center and whose covariance has the
/// half-sides as standard deviations along the box axes.
pub fn obb_to_gaussian(b: &OrientedBox) -> Gaussian2 {
    let (s, c) = b.theta.sin_cos();
    let a2 = (b.w * b.w / 4.0).max(VARIANCE_FLOOR);
    let b2 = (b.h * b.h / 4.0).max(VARIANCE_FLOOR);
    Gaussian2 {
        mu: [b.cx, b.cy],
        sigma: Sym2 {
            xx: a2 * c * c + b2 * s * s,
            xy: (a2 - b2) * c * s,
            yy: a2 * s * s + b2 * c * c,
        },
    }
}

/// Jacobian of the covariance entries `(xx, xy, yy)` of [`obb_to_gaussian`]
/// with respect to `(w, h, theta)`. Mean entries depend only on the center.
pub fn obb_gaussian_jacobian(b: &OrientedBox) -> [[f64; 3]; 3] {
    let (s, c) = b.theta.sin_cos();
    let (a2, b2) = (b.w * b.w / 4.0, b.h * b.h / 4.0);
    let da = if a2 > VARIANCE_FLOOR { b.w / 2.0 } else { 0.0 };
    let db = if b2 > VARIANCE_FLOOR { b.h / 2.0 } else { 0.0 };
    let diff = a2.max(VARIANCE_FLOOR) - b2.max(VARIANCE_FLOOR);
    let (s2, c2) = (2.0 * b.theta).sin_cos();
    // rows: xx, xy, yy ; columns: w, h, theta
    [
        [da * c * c, db * s * s, -diff * s2],
        [da * c * s, -db * c * s, diff * c2],
        [da * s * s, db * c * c, diff * s2],
    ]
}

/// Tight axis-aligned envelope of the box corners.
pub fn obb_to_hbox(b: &OrientedBox) -> HBox {
    let [ex, ey] = hbox_half_extents(b);
    HBox::new(b.cx - ex, b.cy - ey, b.cx + ex, b.cy + ey)
}

pub(crate) fn hbox_half_extents(b: &OrientedBox) -> [f64; 2] {
    let (s, c) = b.theta.sin_cos();
    let (hw, hh) = (b.w / 2.0, b.h / 2.0);
    [hw * c.abs() + hh * s.abs(), hw * s.abs() + hh * c.abs()]
}

pub fn obb_to_point(b: &OrientedBox) -> [f64; 2] {
    b.center()
}

/// Intersection over union of two rotated rectangles, by clipping one corner
/// polygon against the other.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (dx, dy) = (a.cx - b.cx, a.cy - b.cy);
    let reach = a.circumradius() + b.circumradius();
    if dx * dx + dy * dy >= reach * reach {
        return 0.0;
    }
    let inter = a.polygon().intersection(&b.polygon()).area();
    if inter <= 1e-12 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
