//! Newline-delimited JSON scoring protocol.
//!
//! Request, one per line:
//!
//! ```json
//! {"id": "r1", "response_text": "<think>…", "gt_points": [[30, 40]], "image_size": [256, 256],
//!  "config": {"w3": 0.0, "match_threshold": "12px"}}
//! ```
//!
//! Response, one per line, echoing the id:
//!
//! ```json
//! {"id": "r1", "rewards": {…}, "context": {…}, "format": {…}}
//! ```
//!
//! A bad request yields `{"id": "r1", "error": "…"}`, with `id` null when it
//! cannot be recovered from the line.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::matching::{MatchThreshold, Point};
use crate::parser::FormatReport;
use crate::reward::{score_text, RewardBreakdown, RewardConfig, RewardContext};

/// Per-request overrides of the service configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_threshold: Option<MatchThreshold>,
}

impl RewardOverrides {
    pub fn apply(&self, base: &RewardConfig) -> RewardConfig {
        RewardConfig {
            w1: self.w1.unwrap_or(base.w1),
            w2: self.w2.unwrap_or(base.w2),
            w3: self.w3.unwrap_or(base.w3),
            w4: self.w4.unwrap_or(base.w4),
            match_threshold: self.match_threshold.unwrap_or(base.match_threshold),
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub id: String,
    pub response_text: String,
    pub gt_points: Vec<Point>,
    pub image_size: (u32, u32),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RewardOverrides>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    pub rewards: RewardBreakdown,
    pub context: Option<RewardContext>,
    pub format: FormatReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub id: Option<String>,
    pub error: String,
}

pub fn score_request(req: &ScoreRequest, base: &RewardConfig) -> Result<ScoreResponse, String> {
    let cfg = req.config.as_ref().map_or(*base, |o| o.apply(base));
    cfg.validate().map_err(|e| e.to_string())?;
    let (w, h) = req.image_size;
    if w == 0 || h == 0 {
        return Err("image_size must be positive".into());
    }
    if req.gt_points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err("gt_points must be finite".into());
    }
    let s = score_text(&req.response_text, &req.gt_points, req.image_size, &cfg);
    Ok(ScoreResponse {
        id: req.id.clone(),
        rewards: s.rewards,
        context: s.context,
        format: s.format,
    })
}

/// Handles one request line, returning the response line without its
/// trailing newline. Never fails: problems become error lines.
pub fn handle_line(line: &str, base: &RewardConfig) -> String {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_line(None, format!("malformed JSON: {e}")),
    };
    let id = value.get("id").and_then(Value::as_str).map(str::to_owned);
    let result = serde_json::from_value::<ScoreRequest>(value)
        .map_err(|e| format!("invalid request: {e}"))
        .and_then(|req| score_request(&req, base));
    match result {
        Ok(resp) => serde_json::to_string(&resp).unwrap_or_else(|e| error_line(id, e.to_string())),
        Err(msg) => error_line(id, msg),
    }
}

fn error_line(id: Option<String>, error: String) -> String {
    serde_json::to_string(&ErrorResponse { id, error }).expect("error responses always serialize")
}
