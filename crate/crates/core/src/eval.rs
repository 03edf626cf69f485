//! Detection decoding and AP50 evaluation.

use serde::{Deserialize, Serialize};

use crate::dense::DensePrediction;
use crate::geometry::{rotated_iou, OrientedBox};
use crate::scenes::GtObject;

pub const DEFAULT_SCORE_FLOOR: f64 = 0.05;
pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_PRE_NMS: usize = 200;
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: OrientedBox,
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub score_floor: f64,
    pub nms_iou: f64,
    /// Highest-scoring candidates kept per class before suppression.
    pub pre_nms: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            score_floor: DEFAULT_SCORE_FLOOR,
            nms_iou: DEFAULT_NMS_IOU,
            pre_nms: DEFAULT_PRE_NMS,
        }
    }
}

/// Greedy suppression in descending score order, ties by input order.
/// Returns the kept indices.
pub fn nms(dets: &[Detection], iou: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| rotated_iou(&dets[k].bbox, &dets[i].bbox) <= iou)
        {
            kept.push(i);
        }
    }
    kept
}

/// One candidate per cell for its top class, scored by class probability
/// times centerness, then per-class suppression.
pub fn decode(dense: &DensePrediction, params: &DecodeParams) -> Vec<Detection> {
    let mut out = Vec::new();
    for class in 0..dense.num_classes {
        let mut cands: Vec<(usize, Detection)> = (0..dense.num_cells())
            .filter_map(|i| {
                let (top, p) = dense.top_class(i);
                let score = p * dense.centerness(i);
                (top == class && score >= params.score_floor).then(|| {
                    (
                        i,
                        Detection {
                            bbox: dense.decode_box(i),
                            class,
                            score,
                        },
                    )
                })
            })
            .collect();
        cands.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
        cands.truncate(params.pre_nms);
        let dets: Vec<Detection> = cands.into_iter().map(|(_, d)| d).collect();
        out.extend(nms(&dets, params.nms_iou).into_iter().map(|k| dets[k]));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with ground truth; zero if there are none.
    pub map: f64,
}

/// Area under the precision envelope of a ranked hit list.
fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope: running maximum from the tail
    let mut best = 0.0f64;
    for pt in points.iter_mut().rev() {
        best = best.max(pt.1);
        pt.1 = best;
    }
    let mut ap = 0.0;
    let mut last = 0.0;
    for (r, p) in points {
        ap += (r - last) * p;
        last = r;
    }
    ap
}

/// AP at rotated IoU 0.5 over several scenes. Detections are ranked by
/// score, ties by scene then position in the scene's list.
pub fn ap50_scenes(scenes: &[(Vec<Detection>, Vec<GtObject>)], num_classes: usize) -> ApResult {
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let num_gt: usize = scenes
            .iter()
            .map(|(_, g)| g.iter().filter(|o| o.class == class).count())
            .sum();
        if num_gt == 0 {
            per_class.push(None);
            continue;
        }
        let mut ranked: Vec<(usize, usize)> = scenes
            .iter()
            .enumerate()
            .flat_map(|(s, (d, _))| {
                d.iter()
                    .enumerate()
                    .filter(|(_, det)| det.class == class)
                    .map(move |(k, _)| (s, k))
            })
            .collect();
        ranked.sort_by(|a, b| {
            scenes[b.0].0[b.1]
                .score
                .total_cmp(&scenes[a.0].0[a.1].score)
                .then(a.cmp(b))
        });
        let mut matched: Vec<Vec<bool>> = scenes.iter().map(|(_, g)| vec![false; g.len()]).collect();
        let hits: Vec<bool> = ranked
            .iter()
            .map(|&(s, k)| {
                let det = &scenes[s].0[k];
                let best = scenes[s]
                    .1
                    .iter()
                    .enumerate()
                    .filter(|(j, g)| g.class == class && !matched[s][*j])
                    .map(|(j, g)| (j, rotated_iou(&det.bbox, &g.bbox)))
                    .filter(|(_, iou)| *iou >= MATCH_IOU)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                match best {
                    Some((j, _)) => {
                        matched[s][j] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        per_class.push(Some(average_precision(&hits, num_gt)));
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    ApResult { per_class, map }
}

pub fn ap50(dets: &[Detection], gts: &[GtObject], num_classes: usize) -> ApResult {
    ap50_scenes(&[(dets.to_vec(), gts.to_vec())], num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::slot;

    fn gt(cx: f64, class: usize) -> GtObject {
        GtObject {
            bbox: OrientedBox::new(cx, 10.0, 8.0, 4.0, 0.0),
            class,
        }
    }

    fn det(cx: f64, class: usize, score: f64) -> Detection {
        Detection {
            bbox: OrientedBox::new(cx, 10.0, 8.0, 4.0, 0.0),
            class,
            score,
        }
    }

    #[test]
    fn floor_removes_everything() {
        let p = DensePrediction::zeros(4, 4, 2);
        assert!(decode(&p, &DecodeParams::default()).is_empty());
    }

    #[test]
    fn identical_boxes_suppressed_disjoint_kept() {
        let d = [det(10.0, 0, 0.8), det(10.0, 0, 0.9), det(40.0, 0, 0.5)];
        let kept = nms(&d, 0.5);
        assert_eq!(kept, vec![1, 2]);
    }

    #[test]
    fn decode_one_box_per_object() {
        let mut p = DensePrediction::zeros(4, 4, 1);
        for i in [5, 6] {
            let c = p.cell_mut(i);
            c[0] = if i == 5 { 0.9 } else { 0.8 };
            c[1 + slot::CENTERNESS] = 1.0;
            c[1 + slot::LEFT..1 + slot::ANGLE].copy_from_slice(&[1.0; 4]);
        }
        // neighbouring centers one cell apart with 2x2 boxes overlap at 1/3
        let d = decode(&p, &DecodeParams { nms_iou: 0.3, ..Default::default() });
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].score, 0.9);
    }

    #[test]
    fn exact_and_missed() {
        assert_eq!(ap50(&[det(10.0, 0, 0.9)], &[gt(10.0, 0)], 1).map, 1.0);
        // 8x4 boxes shifted by 3.4 along the long side overlap at ~0.4
        let shifted = det(10.0 + 8.0 * (1.0 - 2.0 * 0.4 / 1.4), 0, 0.9);
        assert!((rotated_iou(&shifted.bbox, &gt(10.0, 0).bbox) - 0.4).abs() < 1e-9);
        assert_eq!(ap50(&[shifted], &[gt(10.0, 0)], 1).map, 0.0);
    }

    #[test]
    fn hand_pr_curve() {
        let gts = [gt(10.0, 0), gt(40.0, 0)];
        let dets = [det(10.0, 0, 0.9), det(70.0, 0, 0.8), det(40.0, 0, 0.7)];
        let r = ap50(&dets, &gts, 1);
        assert!((r.map - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn duplicates_and_missing_classes() {
        let r = ap50(&[det(10.0, 0, 0.9), det(10.0, 0, 0.8)], &[gt(10.0, 0)], 3);
        assert_eq!(r.per_class, vec![Some(1.0), None, None]);
        assert_eq!(r.map, 1.0);
        // higher-ranked duplicate of a lower-scored hit: recall 1 reached at precision 1/2
        let r = ap50(&[det(10.0, 0, 0.9), det(10.0, 0, 0.95), det(40.0, 0, 0.99)], &[gt(10.0, 0)], 1);
        assert!((r.map - 0.5).abs() < 1e-12);
    }
}
