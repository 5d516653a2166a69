//! Binary masks, their file formats, and foreground/background IoU.
//!
//! Masks are read either from 8-bit grayscale images (nonzero is
//! foreground) or from a run-length JSON document:
//!
//! ```json
//! {"width": 4, "height": 2, "counts": [3, 2, 3]}
//! ```
//!
//! Runs alternate background/foreground over row-major pixels, starting with
//! background (a leading zero run is allowed), and must cover the image.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    fg: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u64>,
}

impl Mask {
    pub fn new(width: u32, height: u32, fg: Vec<bool>) -> Result<Self> {
        if fg.len() as u64 != u64::from(width) * u64::from(height) {
            return Err(Error::InvalidInput(format!(
                "mask has {} cells, expected {width}x{height}",
                fg.len()
            )));
        }
        Ok(Self { width, height, fg })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let fg = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self { width, height, fg }
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn cells(&self) -> &[bool] {
        &self.fg
    }

    pub fn foreground_count(&self) -> usize {
        self.fg.iter().filter(|v| **v).count()
    }

    pub fn to_rle(&self) -> RleMask {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &v in &self.fg {
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
        counts.push(run);
        RleMask {
            width: self.width,
            height: self.height,
            counts,
        }
    }

    pub fn from_rle(rle: &RleMask) -> Result<Self> {
        let expected = u64::from(rle.width) * u64::from(rle.height);
        let total: u64 = rle.counts.iter().sum();
        if total != expected {
            return Err(Error::InvalidInput(format!(
                "run lengths cover {total} pixels, expected {expected}"
            )));
        }
        let mut fg = Vec::with_capacity(expected as usize);
        for (i, &n) in rle.counts.iter().enumerate() {
            fg.extend(std::iter::repeat_n(i % 2 == 1, n as usize));
        }
        Ok(Self {
            width: rle.width,
            height: rle.height,
            fg,
        })
    }

    /// `.json`/`.rle` files are run-length documents; anything else is decoded
    /// as an image.
    pub fn load(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        if ext == "json" || ext == "rle" {
            let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            let rle: RleMask = serde_json::from_str(&text).map_err(|e| Error::file(path, e))?;
            return Self::from_rle(&rle).map_err(|e| Error::file(path, e));
        }
        let img = image::open(path).map_err(|e| Error::file(path, e))?.to_luma8();
        let (width, height) = img.dimensions();
        Ok(Self {
            width,
            height,
            fg: img.into_raw().into_iter().map(|v| v != 0).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.fg.iter().map(|&v| if v { 255u8 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width, self.height, raw)
            .ok_or_else(|| Error::file(path, "mask buffer size mismatch"))?;
        img.save(path).map_err(|e| Error::file(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskIou {
    pub fg_iou: f64,
    pub bg_iou: f64,
    pub miou: f64,
}

/// IoU from confusion counts accumulated over the whole dataset, in percent.
/// A class absent from both prediction and ground truth scores 100.
pub fn miou(pairs: &[(&Mask, &Mask)]) -> Result<MaskIou> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no mask pairs".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (pred, gt) in pairs {
        if pred.size() != gt.size() {
            return Err(Error::InvalidInput(format!(
                "mask size mismatch: predicted {:?}, ground truth {:?}",
                pred.size(),
                gt.size()
            )));
        }
        for (&p, &g) in pred.fg.iter().zip(&gt.fg) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let iou = |hit: u64, miss: u64| {
        if hit + miss == 0 {
            100.0
        } else {
            100.0 * hit as f64 / (hit + miss) as f64
        }
    };
    let fg_iou = iou(tp, fp + fn_);
    let bg_iou = iou(tn, fp + fn_);
    Ok(MaskIou {
        fg_iou,
        bg_iou,
        miou: (fg_iou + bg_iou) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_masks_score_100() {
        let m = Mask::from_fn(8, 6, |x, y| x + y < 5);
        assert_eq!(
            miou(&[(&m, &m)]).unwrap(),
            MaskIou {
                fg_iou: 100.0,
                bg_iou: 100.0,
                miou: 100.0
            }
        );
        let empty = Mask::from_fn(4, 4, |_, _| false);
        assert_eq!(miou(&[(&empty, &empty)]).unwrap().miou, 100.0);
    }

    #[test]
    fn all_background_prediction_has_zero_fg() {
        let gt = Mask::from_fn(8, 8, |x, _| x < 2);
        let pred = Mask::from_fn(8, 8, |_, _| false);
        assert_eq!(miou(&[(&pred, &gt)]).unwrap().fg_iou, 0.0);
    }

    #[test]
    fn left_half_vs_top_half() {
        let gt = Mask::from_fn(10, 10, |x, _| x < 5);
        let pred = Mask::from_fn(10, 10, |_, y| y < 5);
        let r = miou(&[(&pred, &gt)]).unwrap();
        let third = 100.0 / 3.0;
        assert!((r.fg_iou - third).abs() < 1e-12);
        assert!((r.bg_iou - third).abs() < 1e-12);
        assert!((r.miou - third).abs() < 1e-12);
    }

    #[test]
    fn aggregates_over_dataset_not_per_image() {
        // Image 1: perfect 1-pixel fg; image 2: 9 fg pixels, 3 hit.
        let g1 = Mask::from_fn(4, 4, |x, y| x == 0 && y == 0);
        let g2 = Mask::from_fn(4, 4, |x, y| x < 3 && y < 3);
        let p2 = Mask::from_fn(4, 4, |x, y| x < 3 && y == 0);
        let r = miou(&[(&g1, &g1), (&p2, &g2)]).unwrap();
        assert!((r.fg_iou - 100.0 * 4.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = Mask::from_fn(2, 2, |_, _| true);
        let b = Mask::from_fn(3, 2, |_, _| true);
        assert!(miou(&[(&a, &b)]).is_err());
        assert!(miou(&[]).is_err());
        assert!(Mask::new(2, 2, vec![true; 3]).is_err());
        assert!(Mask::from_rle(&RleMask {
            width: 2,
            height: 2,
            counts: vec![1, 1]
        })
        .is_err());
    }

    #[test]
    fn rle_layout() {
        let m = Mask::from_fn(4, 2, |x, y| y == 0 && x == 3 || y == 1 && x == 0);
        assert_eq!(m.to_rle().counts, vec![3, 2, 3]);
        let all_fg = Mask::from_fn(2, 1, |_, _| true);
        assert_eq!(all_fg.to_rle().counts, vec![0, 2]);
    }

    #[test]
    fn file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn(7, 5, |x, y| (x * y) % 3 == 1);
        let png = dir.path().join("m.png");
        m.save_png(&png).unwrap();
        assert_eq!(Mask::load(&png).unwrap(), m);
        let rle = dir.path().join("m.json");
        std::fs::write(&rle, serde_json::to_string(&m.to_rle()).unwrap()).unwrap();
        assert_eq!(Mask::load(&rle).unwrap(), m);
        assert!(Mask::load(&dir.path().join("missing.png")).is_err());
    }

    proptest! {
        #[test]
        fn rle_round_trip(w in 1u32..12, h in 1u32..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let m = Mask::new(w, h, bits[..(w * h) as usize].to_vec()).unwrap();
            prop_assert_eq!(Mask::from_rle(&m.to_rle()).unwrap(), m);
        }

        #[test]
        fn bounded_and_exact_only_when_identical(w in 1u32..8, h in 1u32..8, a in proptest::collection::vec(any::<bool>(), 64), b in proptest::collection::vec(any::<bool>(), 64)) {
            let n = (w * h) as usize;
            let gt = Mask::new(w, h, a[..n].to_vec()).unwrap();
            let pred = Mask::new(w, h, b[..n].to_vec()).unwrap();
            let r = miou(&[(&pred, &gt)]).unwrap();
            prop_assert!(r.miou <= 100.0);
            let both_classes = gt.foreground_count() > 0 && gt.foreground_count() < n;
            if both_classes {
                prop_assert_eq!(r.miou == 100.0, pred == gt);
            }
        }
    }
}
