//! Verifiable rewards for detect-to-count responses.
//!
//! Four components are combined linearly:
//!
//! ```text
//! total = w1·format + w2·detect + w3·count + w4·non_repeat
//! detect = λ·(n_valid / n_gt) + (0 if n_pred == n_count else −1)
//! count  = 1 if n_count == n_gt else −1
//! ```
//!
//! Format credit is `structure_points` for the tag layout plus up to
//! `content_points_max`, proportional to the share of well-formed entries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{distance, match_points, MatchThreshold, Point};
use crate::parser::{parse_response, FormatReport, ParseOutcome, ParsedResponse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub lambda_detect: f64,
    pub match_threshold: MatchThreshold,
    pub structure_points: f64,
    pub content_points_max: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            lambda_detect: 4.0,
            match_threshold: MatchThreshold::default(),
            structure_points: 1.0,
            content_points_max: 3.0,
        }
    }
}

impl RewardConfig {
    pub fn with_weights(mut self, w: [f64; 4]) -> Self {
        [self.w1, self.w2, self.w3, self.w4] = w;
        self
    }

    pub fn weights(&self) -> [f64; 4] {
        [self.w1, self.w2, self.w3, self.w4]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_detect.is_finite() && self.lambda_detect > 0.0) {
            return Err(Error::Config("lambda_detect must be positive".into()));
        }
        if !(self.content_points_max.is_finite() && self.content_points_max >= 0.0) {
            return Err(Error::Config("content_points_max must be non-negative".into()));
        }
        if !self.structure_points.is_finite() {
            return Err(Error::Config("structure_points must be finite".into()));
        }
        if self.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        self.match_threshold.validate()
    }
}

/// The counts entering the detection and count rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardContext {
    pub n_gt: usize,
    pub n_pred: usize,
    pub n_count: u64,
    pub n_valid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub detect: f64,
    pub count: f64,
    pub non_repeat: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn compose(cfg: &RewardConfig, format: f64, detect: f64, count: f64, non_repeat: f64) -> Self {
        Self {
            format,
            detect,
            count,
            non_repeat,
            total: cfg.w1 * format + cfg.w2 * detect + cfg.w3 * count + cfg.w4 * non_repeat,
        }
    }
}

/// Tag-structure credit plus proportional entry-format credit.
///
/// `declared_count` is the parsed fish count, if any. An empty detection
/// list earns the content credit only when the response declares zero fish.
pub fn format_reward(rep: &FormatReport, declared_count: Option<u64>, cfg: &RewardConfig) -> f64 {
    if !rep.structure_ok {
        return 0.0;
    }
    let content = if rep.entries_total > 0 {
        cfg.content_points_max * rep.entries_well_formed as f64 / rep.entries_total as f64
    } else if declared_count == Some(0) {
        cfg.content_points_max
    } else {
        0.0
    };
    cfg.structure_points + content
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReward {
    pub accuracy: f64,
    pub match_term: f64,
    pub detect: f64,
    pub n_valid: usize,
}

/// Accuracy from keypoint matching plus the count-consistency term.
pub fn detection_reward(
    resp: &ParsedResponse,
    gt: &[Point],
    image_size: (u32, u32),
    cfg: &RewardConfig,
) -> DetectionReward {
    let threshold = cfg.match_threshold.resolve(image_size);
    let n_valid = match_points(&resp.points(), gt, threshold).n_valid;
    let accuracy = accuracy_reward(n_valid, gt.len(), resp.n_pred(), cfg.lambda_detect);
    let match_term = match_reward(resp.n_pred(), resp.fish_count);
    DetectionReward {
        accuracy,
        match_term,
        detect: accuracy + match_term,
        n_valid,
    }
}

/// `λ·n_valid/n_gt`; with no ground truth, full credit only for abstaining.
pub fn accuracy_reward(n_valid: usize, n_gt: usize, n_pred: usize, lambda_detect: f64) -> f64 {
    if n_gt == 0 {
        if n_pred == 0 {
            lambda_detect
        } else {
            0.0
        }
    } else {
        lambda_detect * n_valid as f64 / n_gt as f64
    }
}

pub fn match_reward(n_pred: usize, n_count: u64) -> f64 {
    if n_pred as u64 == n_count {
        0.0
    } else {
        -1.0
    }
}

pub fn count_reward(resp: &ParsedResponse, gt: &[Point]) -> f64 {
    if resp.fish_count == gt.len() as u64 {
        1.0
    } else {
        -1.0
    }
}

/// Keypoints closer than this are treated as the same instance.
pub const DUPLICATE_POINT_DISTANCE: f64 = 1.0;
pub const REPEAT_NGRAM: usize = 10;
pub const REPEAT_LIMIT: usize = 3;

/// −1 for duplicate detections or degenerate, looping reasoning text.
pub fn non_repetition_reward(resp: &ParsedResponse) -> f64 {
    if has_duplicate_detections(resp) || has_repeated_ngram(&resp.think, REPEAT_NGRAM, REPEAT_LIMIT) {
        -1.0
    } else {
        0.0
    }
}

fn has_duplicate_detections(resp: &ParsedResponse) -> bool {
    let d = &resp.detections;
    (0..d.len()).any(|i| {
        (i + 1..d.len())
            .any(|j| d[i].bbox_2d == d[j].bbox_2d || distance(d[i].point(), d[j].point()) < DUPLICATE_POINT_DISTANCE)
    })
}

/// Whether any whitespace-delimited `n`-gram occurs at least `limit` times.
pub fn has_repeated_ngram(text: &str, n: usize, limit: usize) -> bool {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < n {
        return false;
    }
    let mut seen: HashMap<&[&str], usize> = HashMap::new();
    words.windows(n).any(|gram| {
        let c = seen.entry(gram).or_insert(0);
        *c += 1;
        *c >= limit
    })
}

/// Everything known about one scored response.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub rewards: RewardBreakdown,
    /// Absent when the response could not be parsed.
    pub context: Option<RewardContext>,
    pub format: FormatReport,
}

/// Scores a parse outcome; unparseable responses get the fixed penalties
/// `detect = −1`, `count = −1`, `non_repeat = 0`.
pub fn total_reward(outcome: &ParseOutcome, gt: &[Point], image_size: (u32, u32), cfg: &RewardConfig) -> Scored {
    let rep = &outcome.report;
    let Some(resp) = &outcome.parsed else {
        return Scored {
            rewards: RewardBreakdown::compose(cfg, format_reward(rep, None, cfg), -1.0, -1.0, 0.0),
            context: None,
            format: *rep,
        };
    };
    let det = detection_reward(resp, gt, image_size, cfg);
    let rewards = RewardBreakdown::compose(
        cfg,
        format_reward(rep, Some(resp.fish_count), cfg),
        det.detect,
        count_reward(resp, gt),
        non_repetition_reward(resp),
    );
    Scored {
        rewards,
        context: Some(RewardContext {
            n_gt: gt.len(),
            n_pred: resp.n_pred(),
            n_count: resp.fish_count,
            n_valid: det.n_valid,
        }),
        format: *rep,
    }
}

/// Parses and scores raw model output.
pub fn score_text(text: &str, gt: &[Point], image_size: (u32, u32), cfg: &RewardConfig) -> Scored {
    total_reward(&parse_response(text), gt, image_size, cfg)
}
