//! Group-relative advantages and the clipped, KL-penalized GRPO objective.
//!
//! ```text
//! Â_i = (r_i − mean(r)) / std(r)                    (population std)
//! J   = (1/G) Σ_i min(ρ_i·Â_i, clip(ρ_i, 1−ε, 1+ε)·Â_i) − β·KL(π_θ ‖ π_ref)
//! ```
//!
//! Likelihood ratios `ρ_i = π_θ(o_i)/π_old(o_i)` and the KL value are
//! supplied by the caller, so nothing here depends on how the policy is
//! represented.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    /// Groups whose reward std falls below this get zero advantages.
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            std_floor: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return Err(Error::Config(format!(
                "kl_beta must be non-negative, got {}",
                self.kl_beta
            )));
        }
        if !(self.std_floor.is_finite() && self.std_floor > 0.0) {
            return Err(Error::Config("std_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Rewards, likelihood ratios and policy-to-reference divergence for the
/// G responses sampled for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    rewards: Vec<f64>,
    ratios: Vec<f64>,
    kl_to_ref: f64,
}

impl RolloutGroup {
    pub fn new(rewards: Vec<f64>, ratios: Vec<f64>, kl_to_ref: f64) -> Result<Self> {
        if rewards.len() != ratios.len() {
            return Err(Error::InvalidInput(format!(
                "{} rewards but {} ratios",
                rewards.len(),
                ratios.len()
            )));
        }
        if rewards.len() < 2 {
            return Err(Error::InvalidInput("a rollout group needs at least 2 responses".into()));
        }
        if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidInput("likelihood ratios must be positive".into()));
        }
        if rewards.iter().any(|r| !r.is_finite()) || !kl_to_ref.is_finite() {
            return Err(Error::InvalidInput("rewards and KL must be finite".into()));
        }
        Ok(Self {
            rewards,
            ratios,
            kl_to_ref,
        })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn kl_to_ref(&self) -> f64 {
        self.kl_to_ref
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let m = mean(rewards);
    let sd = population_std(rewards);
    if sd < cfg.std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - m) / sd).collect())
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

pub fn clipped_surrogate_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = clip(ratio, 1.0 - eps, 1.0 + eps) * advantage;
    unclipped.min(clipped)
}

/// d/dρ of [`clipped_surrogate_term`]: the advantage while the unclipped
/// branch is active, zero once clipping takes over.
pub fn clipped_surrogate_slope(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped_out = (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps);
    if clipped_out {
        0.0
    } else {
        advantage
    }
}

pub fn grpo_objective(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<f64> {
    let adv = group_advantages(&group.rewards, cfg)?;
    let surrogate = group
        .ratios
        .iter()
        .zip(&adv)
        .map(|(&r, &a)| clipped_surrogate_term(r, a, cfg.clip_epsilon))
        .sum::<f64>()
        / group.len() as f64;
    Ok(surrogate - cfg.kl_beta * group.kl_to_ref)
}
