//! Per-class average precision and mAP over oriented 3D boxes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_3d, Box3D};
use crate::glci::{Detection, DetectionStatus};

/// IoU at which a detection counts as correct.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("no ground truth for any evaluated class")]
    NoGroundTruth,
    #[error("{dets} detection scenes but {gts} ground-truth scenes")]
    SceneCountMismatch { dets: usize, gts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub class_name: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<String, f64>,
    #[serde(rename = "map")]
    pub map_value: f64,
    pub counts: BTreeMap<String, ClassCounts>,
}

impl EvalReport {
    /// Fixed-width per-class table, one class per row and mAP last.
    pub fn table(&self) -> String {
        let width = self
            .per_class_ap
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>5}  {:>5}  {:>5}", "class", "AP25", "TP", "FP", "GT");
        for (class, ap) in &self.per_class_ap {
            let c = self.counts.get(class).copied().unwrap_or_default();
            let _ = writeln!(
                out,
                "{class:<width$}  {:>7.2}  {:>5}  {:>5}  {:>5}",
                100.0 * ap,
                c.tp,
                c.fp,
                c.gt
            );
        }
        let _ = writeln!(out, "{:<width$}  {:>7.2}", "mAP", 100.0 * self.map_value);
        out
    }
}

/// Greedy TP/FP flags for detections of one class against that class's
/// ground truth, returned in the order of `dets`.
///
/// Detections are visited by descending confidence (stable for ties); each
/// claims the unclaimed ground truth with the highest IoU at or above
/// `iou_thresh`, lowest index on ties.
pub fn match_detections(dets: &[(Box3D, f64)], gts: &[Box3D], iou_thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1));
    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let iou = iou_3d(&dets[i].0, gt);
            if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            claimed[g] = true;
            flags[i] = true;
        }
    }
    flags
}

/// All-point interpolated AP from `(confidence, is_tp)` pairs.
///
/// Returns `None` when there is neither ground truth nor any detection, in
/// which case the class is left out of the mean.
pub fn average_precision(scored: &[(f64, bool)], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return if scored.is_empty() { None } else { Some(0.0) };
    }
    // Equal confidences rank false positives first so the result does not
    // depend on input order.
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .0
            .total_cmp(&scored[a].0)
            .then(scored[a].1.cmp(&scored[b].1))
    });

    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in order {
        if scored[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }

    // Envelope: precision at recall r is the best precision at any recall >= r.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Some(ap)
}

/// Pools detections across scenes and averages per-class AP over
/// `class_set`. Removed detections are ignored.
pub fn evaluate(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthObject>],
    class_set: &[String],
    iou_thresh: f64,
) -> Result<EvalReport, EvalError> {
    if class_set.is_empty() {
        return Err(EvalError::EmptyClassSet);
    }
    if dets.len() != gts.len() {
        return Err(EvalError::SceneCountMismatch {
            dets: dets.len(),
            gts: gts.len(),
        });
    }
    let mut per_class_ap = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut any_gt = false;
    for class in class_set {
        let mut scored = Vec::new();
        let mut num_gt = 0;
        for (scene_dets, scene_gts) in dets.iter().zip(gts) {
            let d: Vec<(Box3D, f64)> = scene_dets
                .iter()
                .filter(|d| d.class_name == *class && d.status != DetectionStatus::Removed)
                .map(|d| (d.bbox, d.objectness))
                .collect();
            let g: Vec<Box3D> = scene_gts
                .iter()
                .filter(|g| g.class_name == *class)
                .map(|g| g.bbox)
                .collect();
            num_gt += g.len();
            let flags = match_detections(&d, &g, iou_thresh);
            scored.extend(d.iter().zip(flags).map(|((_, conf), tp)| (*conf, tp)));
        }
        any_gt |= num_gt > 0;
        let tp = scored.iter().filter(|s| s.1).count();
        counts.insert(
            class.clone(),
            ClassCounts {
                tp,
                fp: scored.len() - tp,
                gt: num_gt,
            },
        );
        if let Some(ap) = average_precision(&scored, num_gt) {
            per_class_ap.insert(class.clone(), ap);
        }
    }
    if !any_gt {
        return Err(EvalError::NoGroundTruth);
    }
    let map_value = per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64;
    Ok(EvalReport {
        per_class_ap,
        map_value,
        counts,
    })
}
