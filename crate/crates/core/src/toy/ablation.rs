//! One training run per reward setting, compared on shared scenes.

use serde::{Deserialize, Serialize};

use super::train::{train_toy_grpo, EvalSummary, TrainConfig, TrainOutcome};
use crate::config::Config;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSetting {
    pub name: String,
    /// Weights of format, detect, count and non-repetition.
    pub weights: [f64; 4],
}

impl AblationSetting {
    pub fn new(name: impl Into<String>, weights: [f64; 4]) -> Self {
        Self {
            name: name.into(),
            weights,
        }
    }

    pub fn count_only() -> Self {
        Self::new("count_only", [1.0, 0.0, 1.0, 1.0])
    }

    pub fn detect_only() -> Self {
        Self::new("detect_only", [1.0, 1.0, 0.0, 1.0])
    }

    pub fn combined() -> Self {
        Self::new("combined", [1.0, 1.0, 1.0, 1.0])
    }

    pub fn presets() -> Vec<Self> {
        vec![Self::count_only(), Self::detect_only(), Self::combined()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub seed: u64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub alignment_rate: f64,
    pub mae: f64,
    pub match_rate: f64,
    pub game: f64,
    pub matched_fraction: f64,
    pub mean_total_reward: f64,
    pub final_kl: f64,
}

impl AblationRow {
    fn new(setting: &AblationSetting, seed: u64, eval: &EvalSummary, out: &TrainOutcome) -> Self {
        let [w1, w2, w3, w4] = setting.weights;
        Self {
            setting: setting.name.clone(),
            seed,
            w1,
            w2,
            w3,
            w4,
            alignment_rate: eval.alignment_rate,
            mae: eval.mae,
            match_rate: eval.match_rate,
            game: eval.game,
            matched_fraction: eval.matched_fraction,
            mean_total_reward: eval.mean_total_reward,
            final_kl: out.policy.kl(&out.reference),
        }
    }
}

/// Trains one policy per setting with `seed` and the environment in `base`.
/// Only the reward weights differ between runs.
pub fn run_ablation(settings: &[AblationSetting], seed: u64, base: &Config) -> Result<Vec<AblationRow>> {
    if settings.len() < 2 {
        return Err(Error::Config("an ablation needs at least two settings".into()));
    }
    settings
        .iter()
        .map(|s| {
            let reward = base.reward.with_weights(s.weights);
            let train = TrainConfig { seed, ..base.train };
            let out = train_toy_grpo(&base.grpo, &reward, &base.env, &train)?;
            Ok(AblationRow::new(s, seed, &out.final_eval, &out))
        })
        .collect()
}
