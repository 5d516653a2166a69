//! Dataset-level evaluation of detection, segmentation and counting.

pub mod counting;
pub mod detection;
pub mod segmentation;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use counting::{alignment_rate, game, mae_and_match_rate, Game, GameImage, GAME_LEVELS};
pub use detection::{average_precision_recall, iou_box, ApAr, ImageBoxes};
pub use segmentation::{miou, Mask, MaskIou, RleMask};

use crate::dataset::{GroundTruthFile, PredictionRecord};
use crate::error::{Error, Result};

/// Metrics whose inputs are missing are `None`, never estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap_50_95: Option<f64>,
    pub ar_50_95: Option<f64>,
    pub fg_iou: Option<f64>,
    pub bg_iou: Option<f64>,
    pub miou: Option<f64>,
    pub mae: f64,
    pub match_rate: f64,
    pub game: f64,
    pub game_per_level: [f64; GAME_LEVELS],
    pub alignment_rate: Option<f64>,
    pub n_images: usize,
    /// Predictions whose raw text failed to parse; scored as empty.
    pub n_unparseable: usize,
    /// Ground-truth images with no prediction; scored as empty.
    pub n_missing: usize,
}

/// Evaluates predictions against every ground-truth image.
///
/// `gt_dir` is where relative ground-truth mask paths are resolved. AP/AR
/// need boxes on every ground-truth image; mIoU uses the images where both
/// masks exist.
pub fn evaluate(gt: &GroundTruthFile, gt_dir: &Path, preds: &[PredictionRecord]) -> Result<MetricsReport> {
    if gt.images.is_empty() {
        return Err(Error::InvalidInput("ground truth has no images".into()));
    }
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in preds {
        if gt.get(&p.image_id).is_none() {
            return Err(Error::UnknownImage(p.image_id.clone()));
        }
        if by_id.insert(&p.image_id, p).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate prediction for image {:?}",
                p.image_id
            )));
        }
    }

    let mut counts = Vec::new();
    let mut game_images = Vec::new();
    let mut parsed = Vec::new();
    let mut pred_boxes = Vec::new();
    let mut mask_pairs = Vec::new();
    let mut n_unparseable = 0;
    let mut n_missing = 0;

    for rec in &gt.images {
        let pred = by_id.get(rec.image_id.as_str());
        let response = pred.and_then(|p| p.parsed.as_ref());
        match (pred, response) {
            (None, _) => n_missing += 1,
            (Some(_), None) => n_unparseable += 1,
            (Some(_), Some(r)) => parsed.push(r.clone()),
        }
        counts.push((response.map_or(0, |r| r.fish_count), rec.points.len() as u64));
        game_images.push(GameImage {
            pred: response.map(|r| r.points()).unwrap_or_default(),
            gt: rec.points.clone(),
            image_size: rec.image_size(),
        });
        pred_boxes.push(ImageBoxes {
            image_id: rec.image_id.clone(),
            boxes: response
                .map(|r| r.detections.iter().map(|d| d.bbox_2d).collect())
                .unwrap_or_default(),
        });
        if let Some(pm) = pred.and_then(|p| p.mask.as_ref()) {
            if let Some(gm) = rec.load_mask(gt_dir)? {
                mask_pairs.push((pm.clone(), gm));
            }
        }
    }

    let ap_ar = if gt.images.iter().all(|r| r.boxes.is_some()) {
        let gt_boxes: Vec<ImageBoxes> = gt
            .images
            .iter()
            .map(|r| ImageBoxes {
                image_id: r.image_id.clone(),
                boxes: r.boxes.clone().unwrap_or_default(),
            })
            .collect();
        average_precision_recall(&pred_boxes, &gt_boxes)?
    } else {
        None
    };
    let mask_iou = if mask_pairs.is_empty() {
        None
    } else {
        let refs: Vec<(&Mask, &Mask)> = mask_pairs.iter().map(|(p, g)| (p, g)).collect();
        Some(miou(&refs)?)
    };
    let (mae, match_rate) = mae_and_match_rate(&counts)?;
    let g = game(&game_images)?;

    Ok(MetricsReport {
        ap_50_95: ap_ar.map(|r| r.ap),
        ar_50_95: ap_ar.map(|r| r.ar),
        fg_iou: mask_iou.map(|m| m.fg_iou),
        bg_iou: mask_iou.map(|m| m.bg_iou),
        miou: mask_iou.map(|m| m.miou),
        mae,
        match_rate,
        game: g.game,
        game_per_level: g.per_level,
        alignment_rate: if parsed.is_empty() {
            None
        } else {
            Some(alignment_rate(&parsed)?)
        },
        n_images: gt.images.len(),
        n_unparseable,
        n_missing,
    })
}
