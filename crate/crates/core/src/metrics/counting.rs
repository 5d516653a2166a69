//! Counting metrics: MAE, match rate, grid-average MAE and alignment rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Point;
use crate::parser::ParsedResponse;

pub const GAME_LEVELS: usize = 4;

/// Mean absolute count error and fraction of exact counts over
/// `(predicted, ground truth)` pairs.
pub fn mae_and_match_rate(records: &[(u64, u64)]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no count records".into()));
    }
    let n = records.len() as f64;
    let abs_err: u64 = records.iter().map(|&(p, g)| p.abs_diff(g)).sum();
    let exact = records.iter().filter(|(p, g)| p == g).count();
    Ok((abs_err as f64 / n, exact as f64 / n))
}

/// Grid cell along one axis at `level` (2^level cells). Points on an
/// interior boundary go to the higher cell; the far edge is clamped in.
pub fn cell_index(coord: f64, extent: u32, level: usize) -> usize {
    let cells = 1usize << level;
    let raw = (coord * cells as f64 / f64::from(extent)).floor();
    if raw < 0.0 {
        0
    } else {
        (raw as usize).min(cells - 1)
    }
}

/// Σ over the 2^L × 2^L cells of |predicted − ground-truth| point counts.
pub fn grid_abs_error(pred: &[Point], gt: &[Point], (width, height): (u32, u32), level: usize) -> f64 {
    let side = 1usize << level;
    let mut diff = vec![0i64; side * side];
    let cell = |&(x, y): &Point| cell_index(y, height, level) * side + cell_index(x, width, level);
    for p in pred {
        diff[cell(p)] += 1;
    }
    for g in gt {
        diff[cell(g)] -= 1;
    }
    diff.iter().map(|d| d.unsigned_abs()).sum::<u64>() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameImage {
    pub pred: Vec<Point>,
    pub gt: Vec<Point>,
    pub image_size: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Game {
    /// Mean of the per-level values.
    pub game: f64,
    /// GAME(1) .. GAME(4).
    pub per_level: [f64; GAME_LEVELS],
}

pub fn game(images: &[GameImage]) -> Result<Game> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no images for GAME".into()));
    }
    let n = images.len() as f64;
    let per_level: [f64; GAME_LEVELS] = std::array::from_fn(|i| {
        images
            .iter()
            .map(|img| grid_abs_error(&img.pred, &img.gt, img.image_size, i + 1))
            .sum::<f64>()
            / n
    });
    Ok(Game {
        game: per_level.iter().sum::<f64>() / GAME_LEVELS as f64,
        per_level,
    })
}

/// Fraction of responses whose detection count equals the declared count.
pub fn alignment_rate(responses: &[ParsedResponse]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::InvalidInput("no responses".into()));
    }
    let aligned = responses.iter().filter(|r| r.is_aligned()).count();
    Ok(aligned as f64 / responses.len() as f64)
}
