use crate::annotation::{Shape, WeakAnnotation};
use crate::dense::cell_center;
use crate::losses::{CellTarget, ObjectCell, PointTargets};
use crate::scale_targets::cell_of;

/// Radius, in cells, of the positive disc around a point label.
pub const POINT_RADIUS: f64 = 1.5;

/// Candidate target of `ann` at cell center `p`, with the key used to
/// resolve overlaps: points by distance ahead of every box, boxes by area.
fn candidate(ann: &WeakAnnotation, index: usize, p: [f64; 2], cell_size: f64) -> Option<((u8, f64), CellTarget)> {
    let centerness = |d: [f64; 4]| {
        let [l, t, r, b] = d;
        ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).max(0.0).sqrt()
    };
    let target = |distances: Option<[f64; 4]>, angle: Option<f64>| CellTarget {
        class: ann.class,
        annotation: index,
        distances,
        centerness: distances.map(centerness),
        angle,
    };
    match ann.shape {
        Shape::RBox(b) => {
            if !b.contains(p) {
                return None;
            }
            let [u, v] = b.to_local(p);
            let d = [b.w / 2.0 + u, b.h / 2.0 + v, b.w / 2.0 - u, b.h / 2.0 - v];
            Some(((1, b.area()), target(Some(d), Some(b.theta))))
        }
        Shape::HBox(b) => {
            if !b.contains(p) {
                return None;
            }
            let d = [p[0] - b.xmin, p[1] - b.ymin, b.xmax - p[0], b.ymax - p[1]];
            Some(((1, b.area()), target(Some(d), None)))
        }
        Shape::Point { x, y } => {
            let dist = (p[0] - x).hypot(p[1] - y);
            (dist <= POINT_RADIUS * cell_size).then(|| ((0, dist), target(None, None)))
        }
    }
}

/// Positive cells of a labeled scene. A cell is positive for every label
/// whose region contains its center; the smallest such label wins, ties to
/// the lower index.
pub fn assign_targets(
    annotations: &[WeakAnnotation],
    height: usize,
    width: usize,
    num_classes: usize,
    cell_size: f64,
) -> PointTargets {
    let cells = (0..height * width)
        .map(|i| {
            let p = cell_center(i, width, cell_size);
            annotations
                .iter()
                .enumerate()
                .filter_map(|(k, a)| candidate(a, k, p, cell_size))
                .min_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)))
                .map(|(_, t)| t)
        })
        .collect();
    PointTargets {
        height,
        width,
        num_classes,
        cells,
        annotations: annotations.to_vec(),
    }
}

/// The cell containing each label's anchor, clamped into the grid.
pub fn object_cells(annotations: &[WeakAnnotation], height: usize, width: usize, cell_size: f64) -> Vec<usize> {
    annotations
        .iter()
        .map(|a| {
            let [x, y] = a.anchor();
            let max = [width as f64 - 1e-9, height as f64 - 1e-9];
            let q = [(x / cell_size).clamp(0.0, max[0]), (y / cell_size).clamp(0.0, max[1])];
            cell_of(q, height, width).unwrap_or(0)
        })
        .collect()
}

/// Object cells without scale targets, for passing to the supervised loss.
pub fn plain_objects(cells: &[usize]) -> Vec<ObjectCell> {
    cells
        .iter()
        .map(|&cell| ObjectCell {
            cell,
            scale_target: None,
        })
        .collect()
}
