//! Box IoU and COCO-style AP/AR averaged over IoU thresholds 0.50:0.05:0.95.
//!
//! Detections from a language model carry no confidence, so every box gets
//! the same score and the ranking falls back to dataset order, then emission
//! order within an image.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BBox = [f64; 4];

/// Per-image detection cap, as in the standard protocol.
pub const MAX_DETECTIONS: usize = 100;
const RECALL_POINTS: usize = 101;

/// The ten IoU thresholds, built from integers so that 0.75 is exactly 0.75.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

fn area([x1, y1, x2, y2]: BBox) -> f64 {
    (x2 - x1).max(0.0) * (y2 - y1).max(0.0)
}

pub fn iou_box(a: BBox, b: BBox) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBoxes {
    pub image_id: String,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApAr {
    /// Percent.
    pub ap: f64,
    /// Percent.
    pub ar: f64,
}

/// Returns `None` when the ground truth holds no boxes at all.
///
/// Every prediction must name an image present in `gts`; ground-truth images
/// without predictions contribute only misses.
pub fn average_precision_recall(preds: &[ImageBoxes], gts: &[ImageBoxes]) -> Result<Option<ApAr>> {
    let mut by_id: HashMap<&str, &[BBox]> = HashMap::new();
    for p in preds {
        if !gts.iter().any(|g| g.image_id == p.image_id) {
            return Err(Error::UnknownImage(p.image_id.clone()));
        }
        if by_id.insert(&p.image_id, &p.boxes).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate predictions for image {:?}",
                p.image_id
            )));
        }
    }
    let n_gt: usize = gts.iter().map(|g| g.boxes.len()).sum();
    if n_gt == 0 {
        return Ok(None);
    }

    let thresholds = iou_thresholds();
    let (mut ap_sum, mut ar_sum) = (0.0, 0.0);
    for &t in &thresholds {
        // True/false positive flags in ranking order.
        let mut hits = Vec::new();
        for g in gts {
            let dets = by_id.get(g.image_id.as_str()).copied().unwrap_or(&[]);
            let dets = &dets[..dets.len().min(MAX_DETECTIONS)];
            hits.extend(greedy_match(dets, &g.boxes, t));
        }
        let (ap, recall) = precision_recall_summary(&hits, n_gt);
        ap_sum += ap;
        ar_sum += recall;
    }
    let k = thresholds.len() as f64;
    Ok(Some(ApAr {
        ap: 100.0 * ap_sum / k,
        ar: 100.0 * ar_sum / k,
    }))
}

/// Each detection, in order, takes the unmatched ground truth with highest
/// IoU at or above `threshold` (first one on ties).
fn greedy_match(dets: &[BBox], gts: &[BBox], threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|&d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let iou = iou_box(d, g);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated AP and final recall for one ranked hit list.
fn precision_recall_summary(hits: &[bool], n_gt: usize) -> (f64, f64) {
    if hits.is_empty() {
        return (0.0, 0.0);
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    (sum / RECALL_POINTS as f64, *recall.last().unwrap_or(&0.0))
}
