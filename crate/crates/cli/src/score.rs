//! Batch scoring of model responses against a ground-truth file.

use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fishcount_core::grpo::mean;
use fishcount_core::metrics::alignment_rate;
use fishcount_core::protocol::ErrorResponse;
use fishcount_core::{
    parse_response, total_reward, FormatReport, GroundTruthFile, RewardBreakdown, RewardConfig, RewardContext,
};
use serde::{Deserialize, Serialize};

/// One input line. `image_id` defaults to `id`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreInput {
    pub id: String,
    #[serde(default)]
    pub image_id: Option<String>,
    pub response_text: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoredLine {
    pub id: String,
    pub image_id: String,
    pub rewards: RewardBreakdown,
    pub context: Option<RewardContext>,
    pub format: FormatReport,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum OutputLine {
    Scored(ScoredLine),
    Error(ErrorResponse),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub n_records: usize,
    pub n_scored: usize,
    pub n_errors: usize,
    pub mean_total: Option<f64>,
    pub mean_format: Option<f64>,
    pub mean_detect: Option<f64>,
    pub mean_count: Option<f64>,
    pub mean_non_repeat: Option<f64>,
    /// Over the responses that parsed.
    pub alignment_rate: Option<f64>,
}

pub fn read_inputs(path: &Path) -> Result<Vec<ScoreInput>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        out.push(rec);
    }
    if out.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(out)
}

pub fn score_all(inputs: &[ScoreInput], gt: &GroundTruthFile, cfg: &RewardConfig) -> (Vec<OutputLine>, ScoreSummary) {
    let mut lines = Vec::with_capacity(inputs.len());
    let mut parsed = Vec::new();
    let mut comps: [Vec<f64>; 5] = Default::default();
    for input in inputs {
        let image_id = input.image_id.clone().unwrap_or_else(|| input.id.clone());
        let Some(rec) = gt.get(&image_id) else {
            lines.push(OutputLine::Error(ErrorResponse {
                id: Some(input.id.clone()),
                error: format!("unknown image id {image_id:?}"),
            }));
            continue;
        };
        let outcome = parse_response(&input.response_text);
        let s = total_reward(&outcome, &rec.points, rec.image_size(), cfg);
        let r = s.rewards;
        for (acc, v) in comps
            .iter_mut()
            .zip([r.total, r.format, r.detect, r.count, r.non_repeat])
        {
            acc.push(v);
        }
        parsed.extend(outcome.parsed);
        lines.push(OutputLine::Scored(ScoredLine {
            id: input.id.clone(),
            image_id,
            rewards: s.rewards,
            context: s.context,
            format: s.format,
        }));
    }
    let avg = |xs: &Vec<f64>| (!xs.is_empty()).then(|| mean(xs));
    let n_scored = comps[0].len();
    let summary = ScoreSummary {
        n_records: inputs.len(),
        n_scored,
        n_errors: inputs.len() - n_scored,
        mean_total: avg(&comps[0]),
        mean_format: avg(&comps[1]),
        mean_detect: avg(&comps[2]),
        mean_count: avg(&comps[3]),
        mean_non_repeat: avg(&comps[4]),
        alignment_rate: alignment_rate(&parsed).ok(),
    };
    (lines, summary)
}
