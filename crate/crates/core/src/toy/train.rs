//! GRPO on the toy policy.
//!
//! Each epoch draws fresh training scenes, samples a group of responses per
//! scene from the frozen old policy, scores them through the text parser and
//! reward engine, and then takes `inner_steps` ascent steps on the clipped
//! surrogate minus the KL anchor. Gradients are exact in the softmax logits
//! of every factor:
//!
//! ```text
//! ∂J/∂θ_fk = (1/S) Σ_s (1/G) Σ_i slope(ρ_i, Â_i)·ρ_i·(n_ifk − n_if·p_fk)
//!            − β·p_fk·(log(p_fk/q_fk) − KL_f)
//! ```
//!
//! The surrogate part is one explicit step; the KL part is integrated in
//! sub-steps so a strong anchor contracts toward the reference instead of
//! oscillating around it.
//!
//! Scenes and response sampling use separate RNG streams, so runs that share
//! a seed see identical training and evaluation scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{sample_rollout, Factor, Geometry, PolicyInit, Rollout, ToyPolicy, N_FACTORS};
use super::scene::{generate_scene, SceneParams, SyntheticScene};
use crate::error::{Error, Result};
use crate::grpo::{clipped_surrogate_slope, group_advantages, grpo_objective, mean, GrpoConfig, RolloutGroup};
use crate::metrics::{alignment_rate, game, mae_and_match_rate, GameImage, GAME_LEVELS};
use crate::reward::{score_text, RewardConfig};

const EVAL_SCENE_SALT: u64 = 0x5EED_E7A1_0000_0001;
const EVAL_SAMPLE_SALT: u64 = 0x5EED_E7A1_0000_0002;
const SAMPLE_SALT: u64 = 0x5EED_0000_0000_0003;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub scenes_per_epoch: usize,
    pub learning_rate: f64,
    /// Ascent steps per batch; ratios move away from 1 after the first.
    pub inner_steps: usize,
    /// Logits are recentered and clamped to ±bound after every step.
    pub logit_bound: f64,
    /// Held-out evaluation recorded every epoch.
    pub eval_scenes: usize,
    pub eval_samples: usize,
    /// Larger held-out evaluation of the final policy.
    pub final_eval_scenes: usize,
    pub final_eval_samples: usize,
    pub init: PolicyInit,
    pub geometry: Geometry,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 400,
            scenes_per_epoch: 8,
            learning_rate: 0.05,
            inner_steps: 4,
            logit_bound: 4.6,
            eval_scenes: 16,
            eval_samples: 2,
            final_eval_scenes: 64,
            final_eval_samples: 8,
            init: PolicyInit::default(),
            geometry: Geometry::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.scenes_per_epoch == 0 || self.inner_steps == 0 {
            return Err(Error::Config(
                "scenes_per_epoch and inner_steps must be positive".into(),
            ));
        }
        if self.eval_scenes == 0
            || self.eval_samples == 0
            || self.final_eval_scenes == 0
            || self.final_eval_samples == 0
        {
            return Err(Error::Config("evaluation budgets must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.logit_bound.is_finite() && self.logit_bound > 0.0) {
            return Err(Error::Config("logit_bound must be positive".into()));
        }
        let g = &self.geometry;
        if !(g.precise_jitter >= 0.0 && g.precise_jitter < 1.0 && g.sloppy_min > 1.0 && g.sloppy_max >= g.sloppy_min) {
            return Err(Error::Config(
                "sloppy keypoints must fall outside the match radius, precise ones inside".into(),
            ));
        }
        ToyPolicy::new(&self.init).map(|_| ())
    }
}

/// Held-out behaviour of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub alignment_rate: f64,
    pub mae: f64,
    /// Fraction of responses whose declared count is exact.
    pub match_rate: f64,
    pub game: f64,
    pub game_per_level: [f64; GAME_LEVELS],
    /// Matched keypoints over ground-truth points, pooled.
    pub matched_fraction: f64,
    pub mean_total_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub mean_total_reward: f64,
    pub mean_format: f64,
    pub mean_detect: f64,
    pub mean_count: f64,
    pub mean_non_repeat: f64,
    /// Over this epoch's training rollouts.
    pub alignment_rate: f64,
    pub objective: f64,
    pub kl_to_ref: f64,
    pub heldout_game: f64,
    pub heldout_match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub final_eval: EvalSummary,
    /// Steps on which the logit clamp was active.
    pub projection_steps: usize,
    pub total_steps: usize,
}

impl TrainOutcome {
    /// Every update ran into the logit clamp.
    pub fn projection_saturated(&self) -> bool {
        self.total_steps > 0 && self.projection_steps == self.total_steps
    }
}

/// Held-out scenes for a seed: identical for every run sharing the seed.
pub fn eval_scenes(seed: u64, env: &SceneParams, threshold: f64, n: usize) -> Result<Vec<SyntheticScene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SCENE_SALT);
    (0..n).map(|_| generate_scene(rng.gen(), env, threshold)).collect()
}

pub fn evaluate_policy(
    policy: &ToyPolicy,
    scenes: &[SyntheticScene],
    samples: usize,
    reward: &RewardConfig,
    geometry: &Geometry,
    seed: u64,
) -> Result<EvalSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SAMPLE_SALT);
    let mut responses = Vec::new();
    let mut counts = Vec::new();
    let mut images = Vec::new();
    let mut totals = Vec::new();
    let (mut matched, mut gt_total) = (0usize, 0usize);
    for scene in scenes {
        let threshold = reward.match_threshold.resolve(scene.image_size);
        for _ in 0..samples {
            let r = sample_rollout(policy, scene, threshold, geometry, &mut rng);
            let scored = score_text(&r.text, &scene.gt_points, scene.image_size, reward);
            totals.push(scored.rewards.total);
            if let Some(ctx) = scored.context {
                matched += ctx.n_valid;
            }
            gt_total += scene.gt_points.len();
            counts.push((r.response.fish_count, scene.gt_points.len() as u64));
            images.push(GameImage {
                pred: r.response.points(),
                gt: scene.gt_points.clone(),
                image_size: scene.image_size,
            });
            responses.push(r.response);
        }
    }
    let (mae, match_rate) = mae_and_match_rate(&counts)?;
    let g = game(&images)?;
    Ok(EvalSummary {
        alignment_rate: alignment_rate(&responses)?,
        mae,
        match_rate,
        game: g.game,
        game_per_level: g.per_level,
        matched_fraction: if gt_total == 0 {
            1.0
        } else {
            matched as f64 / gt_total as f64
        },
        mean_total_reward: mean(&totals),
    })
}

struct ScoredGroup {
    rollouts: Vec<Rollout>,
    rewards: Vec<f64>,
    advantages: Vec<f64>,
    old_log_probs: Vec<f64>,
}

pub fn train_toy_grpo(
    grpo: &GrpoConfig,
    reward: &RewardConfig,
    env: &SceneParams,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    grpo.validate()?;
    reward.validate()?;
    env.validate()?;
    train.validate()?;

    let threshold = reward.match_threshold.resolve(env.image_size());
    let reference = ToyPolicy::new(&train.init)?;
    let mut policy = reference.clone();
    let heldout = eval_scenes(train.seed, env, threshold, train.eval_scenes)?;
    let final_scenes = eval_scenes(train.seed.wrapping_add(1), env, threshold, train.final_eval_scenes)?;

    let mut scene_rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(train.seed ^ SAMPLE_SALT);
    let g = grpo.group_size;
    let mut records = Vec::with_capacity(train.epochs);
    let (mut projection_steps, mut total_steps) = (0, 0);

    for epoch in 0..train.epochs {
        let scenes = (0..train.scenes_per_epoch)
            .map(|_| generate_scene(scene_rng.gen(), env, threshold))
            .collect::<Result<Vec<_>>>()?;

        let mut comps = [0.0f64; 5];
        let mut aligned = 0usize;
        let mut groups = Vec::with_capacity(scenes.len());
        for scene in &scenes {
            let rollouts: Vec<Rollout> = (0..g)
                .map(|_| sample_rollout(&policy, scene, threshold, &train.geometry, &mut sample_rng))
                .collect();
            let mut rewards = Vec::with_capacity(g);
            for r in &rollouts {
                let s = score_text(&r.text, &scene.gt_points, scene.image_size, reward).rewards;
                for (acc, v) in comps
                    .iter_mut()
                    .zip([s.total, s.format, s.detect, s.count, s.non_repeat])
                {
                    *acc += v;
                }
                aligned += usize::from(r.response.is_aligned());
                rewards.push(s.total);
            }
            let advantages = group_advantages(&rewards, grpo)?;
            let old_log_probs = rollouts.iter().map(|r| policy.log_prob(&r.counts)).collect();
            groups.push(ScoredGroup {
                rollouts,
                rewards,
                advantages,
                old_log_probs,
            });
        }

        for _ in 0..train.inner_steps {
            let grad = surrogate_gradient(&policy, &groups, grpo);
            let mut clamped = false;
            for f in Factor::ALL {
                let step: Vec<f64> = grad[f.index()].iter().map(|d| train.learning_rate * d).collect();
                clamped |= policy.factor_mut(f).apply(&step, train.logit_bound);
            }
            clamped |= kl_anchor_step(
                &mut policy,
                &reference,
                train.learning_rate * grpo.kl_beta,
                train.logit_bound,
            );
            projection_steps += usize::from(clamped);
            total_steps += 1;
        }

        let kl_to_ref = policy.kl(&reference);
        let objective = groups
            .iter()
            .map(|grp| {
                let ratios = ratios(&policy, grp);
                RolloutGroup::new(grp.rewards.clone(), ratios, kl_to_ref).and_then(|rg| grpo_objective(&rg, grpo))
            })
            .collect::<Result<Vec<_>>>()?;
        let heldout_eval = evaluate_policy(
            &policy,
            &heldout,
            train.eval_samples,
            reward,
            &train.geometry,
            train.seed,
        )?;
        let n = (scenes.len() * g) as f64;
        records.push(TrainRecord {
            epoch,
            mean_total_reward: comps[0] / n,
            mean_format: comps[1] / n,
            mean_detect: comps[2] / n,
            mean_count: comps[3] / n,
            mean_non_repeat: comps[4] / n,
            alignment_rate: aligned as f64 / n,
            objective: mean(&objective),
            kl_to_ref,
            heldout_game: heldout_eval.game,
            heldout_match_rate: heldout_eval.match_rate,
        });
    }

    let final_eval = evaluate_policy(
        &policy,
        &final_scenes,
        train.final_eval_samples,
        reward,
        &train.geometry,
        train.seed.wrapping_add(1),
    )?;
    Ok(TrainOutcome {
        records,
        policy,
        reference,
        final_eval,
        projection_steps,
        total_steps,
    })
}

fn ratios(policy: &ToyPolicy, grp: &ScoredGroup) -> Vec<f64> {
    grp.rollouts
        .iter()
        .zip(&grp.old_log_probs)
        .map(|(r, old)| (policy.log_prob(&r.counts) - old).exp())
        .collect()
}

/// Exact gradient of the mean clipped surrogate over groups, in the logits.
fn surrogate_gradient(policy: &ToyPolicy, groups: &[ScoredGroup], grpo: &GrpoConfig) -> [[f64; 2]; N_FACTORS] {
    let mut grad = [[0.0; 2]; N_FACTORS];
    let probs: Vec<Vec<f64>> = Factor::ALL.iter().map(|&f| policy.factor(f).probs()).collect();
    let norm = 1.0 / groups.len() as f64;

    for grp in groups {
        let scale = norm / grp.rollouts.len() as f64;
        for ((r, &adv), ratio) in grp.rollouts.iter().zip(&grp.advantages).zip(ratios(policy, grp)) {
            let slope = clipped_surrogate_slope(ratio, adv, grpo.clip_epsilon);
            if slope == 0.0 {
                continue;
            }
            let coef = scale * slope * ratio;
            for f in Factor::ALL {
                let c = r.counts.0[f.index()];
                let draws = f64::from(c[0] + c[1]);
                for k in 0..2 {
                    grad[f.index()][k] += coef * (f64::from(c[k]) - draws * probs[f.index()][k]);
                }
            }
        }
    }
    grad
}

/// Gradient of −KL(π ‖ π_ref) in the logits, factor by factor.
fn kl_gradient(policy: &ToyPolicy, reference: &ToyPolicy) -> [[f64; 2]; N_FACTORS] {
    let mut grad = [[0.0; 2]; N_FACTORS];
    for f in Factor::ALL {
        let p = policy.factor(f).probs();
        let lp = policy.factor(f).log_probs();
        let lq = reference.factor(f).log_probs();
        let kl = policy.factor(f).kl(reference.factor(f));
        for k in (0..2).filter(|&k| p[k] > 0.0) {
            grad[f.index()][k] = -p[k] * (lp[k] - lq[k] - kl);
        }
    }
    grad
}

/// Moves the policy along −∇KL by `strength` (= η·β). A single explicit step
/// overshoots once η·β is large, so the move is split into sub-steps of at
/// most 1.
fn kl_anchor_step(policy: &mut ToyPolicy, reference: &ToyPolicy, strength: f64, bound: f64) -> bool {
    if strength <= 0.0 {
        return false;
    }
    let n = strength.ceil() as usize;
    let h = strength / n as f64;
    let mut clamped = false;
    for _ in 0..n {
        let grad = kl_gradient(policy, reference);
        for f in Factor::ALL {
            let step: Vec<f64> = grad[f.index()].iter().map(|d| h * d).collect();
            clamped |= policy.factor_mut(f).apply(&step, bound);
        }
    }
    clamped
}

/// Full gradient of the mean per-group objective.
#[cfg(test)]
fn objective_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[ScoredGroup],
    grpo: &GrpoConfig,
) -> [[f64; 2]; N_FACTORS] {
    let mut grad = surrogate_gradient(policy, groups, grpo);
    let kl = kl_gradient(policy, reference);
    for (g, k) in grad.iter_mut().zip(kl) {
        for (a, b) in g.iter_mut().zip(k) {
            *a += grpo.kl_beta * b;
        }
    }
    grad
}
