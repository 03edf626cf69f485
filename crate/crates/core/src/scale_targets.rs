//! Scale targets from point labels: a pixel-grid Voronoi tessellation gives
//! background markers, a marker-driven priority flood over an elevation grid
//! gives one basin per object, and each basin's extent in the predicted box
//! frame becomes the `(w, h)` regression target.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dense::cell_center;
use crate::error::{Error, Result};

/// Row-major grid of elevations.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ElevationGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 || values.len() != height * width {
            return Err(Error::shape(
                format!("{height}x{width} grid (at least 2x2)"),
                format!("{} values", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid("elevation must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn flat(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0.0; height * width]).expect("valid flat grid")
    }
}

/// Cell index containing a point given in scene units (one unit per cell).
pub fn cell_of(p: [f64; 2], height: usize, width: usize) -> Option<usize> {
    let (c, r) = (p[0].floor(), p[1].floor());
    if c < 0.0 || r < 0.0 || c >= width as f64 || r >= height as f64 {
        None
    } else {
        Some(r as usize * width + c as usize)
    }
}

fn neighbors4(i: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / width, i % width);
    let up = (r > 0).then(|| i - width);
    let down = (r + 1 < height).then(|| i + width);
    let left = (c > 0).then(|| i - 1);
    let right = (c + 1 < width).then(|| i + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Nearest-point labels (1-based point index) and the ridge mask of cells
/// with a differently labeled 4-neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiGrid {
    pub labels: Vec<u32>,
    pub ridge: Vec<bool>,
}

pub fn grid_voronoi(points: &[[f64; 2]], height: usize, width: usize) -> Result<VoronoiGrid> {
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    let n = height * width;
    let mut labels = vec![0u32; n];
    for (i, label) in labels.iter_mut().enumerate() {
        let q = cell_center(i, width, 1.0);
        let mut best = (f64::INFINITY, 0usize);
        for (k, p) in points.iter().enumerate() {
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let d = dx * dx + dy * dy;
            if d < best.0 {
                best = (d, k);
            }
        }
        *label = best.1 as u32 + 1;
    }
    let ridge = (0..n)
        .map(|i| neighbors4(i, height, width).any(|j| labels[j] != labels[i]))
        .collect();
    Ok(VoronoiGrid { labels, ridge })
}

/// Foreground markers `(point, id >= 1)` and the background ridge mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSet {
    pub foreground: Vec<([f64; 2], u32)>,
    pub ridge: Vec<bool>,
}

impl MarkerSet {
    /// Markers from point labels, with the Voronoi ridges of the same points
    /// as background. Ridge cells under a foreground marker are cleared.
    pub fn from_points(points: &[[f64; 2]], height: usize, width: usize) -> Result<Self> {
        let vor = grid_voronoi(points, height, width)?;
        let mut ridge = vor.ridge;
        let mut foreground = Vec::with_capacity(points.len());
        for (k, &p) in points.iter().enumerate() {
            let cell = cell_of(p, height, width).ok_or_else(|| {
                Error::ConfigInvalid(format!("marker ({}, {}) outside the grid", p[0], p[1]))
            })?;
            ridge[cell] = false;
            foreground.push((p, k as u32 + 1));
        }
        Ok(Self { foreground, ridge })
    }
}

/// Basin id per cell; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasinLabeling {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl BasinLabeling {
    pub fn cells_of(&self, id: u32) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == id)
            .map(|(i, _)| i)
    }

    /// Writes the labeling as a plain (P2) PGM image.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let max = self.labels.iter().copied().max().unwrap_or(0).max(1);
        writeln!(out, "P2\n{} {}\n{}", self.width, self.height, max)?;
        for row in self.labels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, PartialEq)]
struct Entry {
    level: f64,
    seq: u64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (level, seq)
        other
            .level
            .total_cmp(&self.level)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Labeling together with the flood level at which every cell was reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Flood {
    pub labeling: BasinLabeling,
    pub levels: Vec<f64>,
}

/// Marker-driven priority flood with 4-connectivity.
pub fn watershed(elev: &ElevationGrid, markers: &MarkerSet) -> Result<BasinLabeling> {
    flood(elev, markers).map(|f| f.labeling)
}

pub fn flood(elev: &ElevationGrid, markers: &MarkerSet) -> Result<Flood> {
    if markers.foreground.is_empty() {
        return Err(Error::NoMarkers);
    }
    let (h, w) = (elev.height, elev.width);
    let n = h * w;
    if markers.ridge.len() != n {
        return Err(Error::shape(n, markers.ridge.len()));
    }
    const UNSET: u32 = u32::MAX;
    let mut labels = vec![UNSET; n];
    let mut levels = vec![f64::NAN; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut seed = |cell: usize, label: u32, labels: &mut Vec<u32>, heap: &mut BinaryHeap<Entry>| {
        labels[cell] = label;
        levels[cell] = elev.values[cell];
        heap.push(Entry {
            level: elev.values[cell],
            seq,
            cell,
        });
        seq += 1;
    };
    for &(p, id) in &markers.foreground {
        let cell = cell_of(p, h, w).ok_or_else(|| {
            Error::ConfigInvalid(format!("marker ({}, {}) outside the grid", p[0], p[1]))
        })?;
        if labels[cell] == UNSET {
            seed(cell, id, &mut labels, &mut heap);
        }
    }
    for cell in 0..n {
        if markers.ridge[cell] && labels[cell] == UNSET {
            seed(cell, 0, &mut labels, &mut heap);
        }
    }
    let mut levels = levels;
    while let Some(Entry { level, cell, .. }) = heap.pop() {
        let label = labels[cell];
        for nb in neighbors4(cell, h, w) {
            if labels[nb] == UNSET {
                labels[nb] = label;
                let nl = elev.values[nb].max(level);
                levels[nb] = nl;
                heap.push(Entry {
                    level: nl,
                    seq,
                    cell: nb,
                });
                seq += 1;
            }
        }
    }
    debug_assert!(labels.iter().all(|&l| l != UNSET));
    Ok(Flood {
        labeling: BasinLabeling {
            height: h,
            width: w,
            labels,
        },
        levels,
    })
}

/// How a basin's extent along each axis is measured.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum ExtentPolicy {
    /// Full span of the basin cells plus one cell.
    #[default]
    Full,
    /// Span between two linearly interpolated quantiles of the projected cell
    /// centers plus one cell.
    Quantile(f64, f64),
}

/// Extent `(w_t, h_t)` of basin `id` in the frame rotated by `theta` about
/// `anchor`, in scene units.
pub fn basin_extents(
    labels: &BasinLabeling,
    id: u32,
    anchor: [f64; 2],
    theta: f64,
    policy: ExtentPolicy,
) -> Result<(f64, f64)> {
    let (s, c) = theta.sin_cos();
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for i in labels.cells_of(id) {
        let q = cell_center(i, labels.width, 1.0);
        let (dx, dy) = (q[0] - anchor[0], q[1] - anchor[1]);
        us.push(c * dx + s * dy);
        vs.push(-s * dx + c * dy);
    }
    if us.is_empty() {
        return Err(Error::EmptyBasin(id));
    }
    let span = |v: &mut Vec<f64>| -> f64 {
        match policy {
            ExtentPolicy::Full => {
                let (lo, hi) = v
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                hi - lo + 1.0
            }
            ExtentPolicy::Quantile(a, b) => {
                v.sort_by(f64::total_cmp);
                let pick = |q: f64| {
                    let x = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
                    let (i, f) = (x.floor() as usize, x.fract());
                    v[i] + f * (v[(i + 1).min(v.len() - 1)] - v[i])
                };
                pick(b) - pick(a) + 1.0
            }
        }
    };
    Ok((span(&mut us), span(&mut vs)))
}

/// Scale targets for all point labels of a scene. `angles[k]` is the
/// predicted orientation of object `k`.
pub fn scale_targets_for_scene(
    points: &[[f64; 2]],
    angles: &[f64],
    elev: &ElevationGrid,
    policy: ExtentPolicy,
) -> Result<Vec<(f64, f64)>> {
    if angles.len() != points.len() {
        return Err(Error::shape(points.len(), angles.len()));
    }
    let labeling = scene_basins(points, elev)?;
    points
        .iter()
        .zip(angles)
        .enumerate()
        .map(|(k, (&p, &theta))| basin_extents(&labeling, k as u32 + 1, p, theta, policy))
        .collect()
}

/// Basins for point labels; the angle-independent half of
/// [`scale_targets_for_scene`].
pub fn scene_basins(points: &[[f64; 2]], elev: &ElevationGrid) -> Result<BasinLabeling> {
    let markers = MarkerSet::from_points(points, elev.height, elev.width)?;
    watershed(elev, &markers)
}
