//! A small categorical detect-to-count policy.
//!
//! The policy is a product of independent categorical factors:
//!
//! * one emit/skip factor per [`CandidateKind`], drawn once per candidate;
//! * a precise/sloppy factor, drawn once per emitted detection (a sloppy
//!   keypoint lands well outside the match radius);
//! * a consistent/perturbed factor, drawn once per response, deciding
//!   whether the declared count equals the number of emitted detections.
//!
//! Because every factor is categorical, response likelihoods, likelihood
//! ratios and the KL divergence to a reference policy are all exact.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{CandidateKind, SyntheticScene};
use crate::error::{Error, Result};
use crate::matching::Point;
use crate::parser::{serialize_response, Detection, ParsedResponse, FISH_LABEL};

pub const N_FACTORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    EmitFish,
    EmitDistractor,
    EmitClutter,
    Precision,
    Consistency,
}

impl Factor {
    pub const ALL: [Factor; N_FACTORS] = [
        Factor::EmitFish,
        Factor::EmitDistractor,
        Factor::EmitClutter,
        Factor::Precision,
        Factor::Consistency,
    ];

    pub fn emit(kind: CandidateKind) -> Factor {
        match kind {
            CandidateKind::Fish => Factor::EmitFish,
            CandidateKind::Distractor => Factor::EmitDistractor,
            CandidateKind::Clutter => Factor::EmitClutter,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Outcome 0 of every binary factor: emit, precise, consistent.
pub const YES: usize = 0;
pub const NO: usize = 1;

/// Softmax-parameterized categorical distribution. Impossible outcomes have
/// logit −∞ and stay impossible under updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    logits: Vec<f64>,
}

impl Categorical {
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.len() < 2 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "categorical probabilities must lie in [0, 1] and sum to 1, got {probs:?}"
            )));
        }
        let mut c = Self {
            logits: probs.iter().map(|p| p.ln()).collect(),
        };
        c.recenter();
        Ok(c)
    }

    pub fn binary(p_yes: f64) -> Result<Self> {
        Self::from_probs(&[p_yes, 1.0 - p_yes])
    }

    pub fn probs(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        self.logits.iter().map(|l| l - lse).collect()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let probs = self.probs();
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    }

    pub fn kl(&self, reference: &Categorical) -> f64 {
        let lp = self.log_probs();
        let lq = reference.log_probs();
        self.probs()
            .iter()
            .zip(lp.iter().zip(&lq))
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, (a, b))| p * (a - b))
            .sum()
    }

    pub fn total_variation(&self, reference: &Categorical) -> f64 {
        0.5 * self
            .probs()
            .iter()
            .zip(reference.probs())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }

    fn recenter(&mut self) {
        let finite: Vec<f64> = self.logits.iter().copied().filter(|l| l.is_finite()).collect();
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        self.logits
            .iter_mut()
            .filter(|l| l.is_finite())
            .for_each(|l| *l -= mean);
    }

    /// Adds `step` to the logits, then recenters and clamps them to
    /// `[-bound, bound]`. Returns whether the clamp was active.
    pub(crate) fn apply(&mut self, step: &[f64], bound: f64) -> bool {
        for (l, s) in self.logits.iter_mut().zip(step).filter(|(l, _)| l.is_finite()) {
            *l += s;
        }
        self.recenter();
        let mut clamped = false;
        for l in self.logits.iter_mut().filter(|l| l.is_finite()) {
            if l.abs() > bound {
                *l = l.clamp(-bound, bound);
                clamped = true;
            }
        }
        clamped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyInit {
    pub p_emit_fish: f64,
    pub p_emit_distractor: f64,
    pub p_emit_clutter: f64,
    pub p_precise: f64,
    pub p_consistent: f64,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self {
            p_emit_fish: 0.6,
            p_emit_distractor: 0.6,
            p_emit_clutter: 0.3,
            p_precise: 0.5,
            p_consistent: 0.5,
        }
    }
}

/// Geometry of emitted keypoints relative to the match radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// Precise keypoints land within this fraction of the radius.
    pub precise_jitter: f64,
    /// Sloppy keypoints land at this range of multiples of the radius.
    pub sloppy_min: f64,
    pub sloppy_max: f64,
    /// Half-size of emitted boxes, as a multiple of the radius.
    pub box_half: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            precise_jitter: 0.25,
            sloppy_min: 1.5,
            sloppy_max: 2.5,
            box_half: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    factors: Vec<Categorical>,
}

impl ToyPolicy {
    pub fn new(init: &PolicyInit) -> Result<Self> {
        let factors = [
            init.p_emit_fish,
            init.p_emit_distractor,
            init.p_emit_clutter,
            init.p_precise,
            init.p_consistent,
        ]
        .iter()
        .map(|&p| Categorical::binary(p))
        .collect::<Result<Vec<_>>>()?;
        Ok(Self { factors })
    }

    pub fn factor(&self, f: Factor) -> &Categorical {
        &self.factors[f.index()]
    }

    pub(crate) fn factor_mut(&mut self, f: Factor) -> &mut Categorical {
        &mut self.factors[f.index()]
    }

    pub fn p(&self, f: Factor) -> f64 {
        self.factor(f).probs()[YES]
    }

    pub fn p_emit(&self, kind: CandidateKind) -> f64 {
        self.p(Factor::emit(kind))
    }

    pub fn p_consistent(&self) -> f64 {
        self.p(Factor::Consistency)
    }

    /// Log-likelihood of the learned choices recorded in `counts`.
    pub fn log_prob(&self, counts: &ChoiceCounts) -> f64 {
        Factor::ALL
            .iter()
            .map(|&f| {
                let lp = self.factor(f).log_probs();
                counts.0[f.index()]
                    .iter()
                    .zip(&lp)
                    .filter(|(&n, _)| n > 0)
                    .map(|(&n, l)| f64::from(n) * l)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Sum of per-factor KL divergences.
    pub fn kl(&self, reference: &ToyPolicy) -> f64 {
        self.factors.iter().zip(&reference.factors).map(|(a, b)| a.kl(b)).sum()
    }

    /// Largest per-factor total-variation distance.
    pub fn max_total_variation(&self, reference: &ToyPolicy) -> f64 {
        self.factors
            .iter()
            .zip(&reference.factors)
            .map(|(a, b)| a.total_variation(b))
            .fold(0.0, f64::max)
    }
}

/// How often each outcome of each factor was drawn in one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChoiceCounts(pub [[u32; 2]; N_FACTORS]);

impl ChoiceCounts {
    fn record(&mut self, f: Factor, outcome: usize) {
        self.0[f.index()][outcome] += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub text: String,
    pub response: ParsedResponse,
    pub counts: ChoiceCounts,
}

fn clamp_point((x, y): Point, (w, h): (u32, u32)) -> Point {
    (x.clamp(0.0, f64::from(w)), y.clamp(0.0, f64::from(h)))
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Samples one response and records the learned choices behind it.
pub fn sample_rollout<R: Rng + ?Sized>(
    policy: &ToyPolicy,
    scene: &SyntheticScene,
    threshold: f64,
    geometry: &Geometry,
    rng: &mut R,
) -> Rollout {
    let mut counts = ChoiceCounts::default();
    let mut detections = Vec::new();
    let (w, h) = scene.image_size;

    for cand in &scene.candidates {
        let f = Factor::emit(cand.kind);
        let choice = policy.factor(f).sample(rng);
        counts.record(f, choice);
        if choice != YES {
            continue;
        }
        let precise = policy.factor(Factor::Precision).sample(rng);
        counts.record(Factor::Precision, precise);
        let (radius, angle) = if precise == YES {
            (
                threshold * geometry.precise_jitter * rng.gen::<f64>().sqrt(),
                rng.gen::<f64>() * TAU,
            )
        } else {
            (
                threshold * rng.gen_range(geometry.sloppy_min..=geometry.sloppy_max),
                rng.gen::<f64>() * TAU,
            )
        };
        let raw = (cand.point.0 + radius * angle.cos(), cand.point.1 + radius * angle.sin());
        let (x, y) = clamp_point(raw, scene.image_size);
        let (x, y) = (round1(x), round1(y));
        let half = threshold * geometry.box_half;
        let (x1, y1) = clamp_point((x - half, y - half), (w, h));
        let (x2, y2) = clamp_point((x + half, y + half), (w, h));
        detections.push(Detection::new(
            [round1(x1), round1(y1), round1(x2), round1(y2)],
            [x, y],
            FISH_LABEL,
        ));
    }

    let n = detections.len() as u64;
    let consistent = policy.factor(Factor::Consistency).sample(rng);
    counts.record(Factor::Consistency, consistent);
    let fish_count = if consistent == YES {
        n
    } else {
        // Any nonzero offset; reflected so the count stays non-negative
        // and still differs from n.
        let delta = [-2i64, -1, 1, 2][rng.gen_range(0..4)];
        let declared = n as i64 + delta;
        if declared < 0 {
            n + delta.unsigned_abs()
        } else {
            declared as u64
        }
    };

    let response = ParsedResponse {
        think: format!("Scanning the frame, {n} regions look like fish, so I report {fish_count}."),
        detections,
        fish_count,
    };
    let text = serialize_response(&response).expect("generated think text never contains the closing tag");
    Rollout { text, response, counts }
}

/// Raw response text in the three-tag format.
pub fn sample_response<R: Rng + ?Sized>(
    policy: &ToyPolicy,
    scene: &SyntheticScene,
    threshold: f64,
    geometry: &Geometry,
    rng: &mut R,
) -> String {
    sample_rollout(policy, scene, threshold, geometry, rng).text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::alignment_rate;
    use crate::parser::parse_response;
    use crate::toy::scene::{generate_scene, SceneParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const THR: f64 = 9.0;

    fn scene(seed: u64) -> SyntheticScene {
        generate_scene(seed, &SceneParams::default(), THR).unwrap()
    }

    #[test]
    fn categorical_basics() {
        let c = Categorical::from_probs(&[0.2, 0.3, 0.5]).unwrap();
        let p = c.probs();
        assert!((p[0] - 0.2).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(c.kl(&c).abs() < 1e-15);
        let q = Categorical::from_probs(&[0.5, 0.25, 0.25]).unwrap();
        let expected: f64 = [0.2f64, 0.3, 0.5]
            .iter()
            .zip([0.5f64, 0.25, 0.25])
            .map(|(a, b)| a * (a / b).ln())
            .sum();
        assert!((c.kl(&q) - expected).abs() < 1e-12);
        assert!((c.total_variation(&q) - 0.3).abs() < 1e-12);
        assert!(Categorical::from_probs(&[0.5, 0.6]).is_err());
        assert!(Categorical::binary(-0.1).is_err());
    }

    #[test]
    fn impossible_outcomes_stay_impossible() {
        let mut c = Categorical::binary(1.0).unwrap();
        assert_eq!(c.probs(), vec![1.0, 0.0]);
        assert_eq!(c.kl(&c), 0.0);
        c.apply(&[0.3, 5.0], 4.6);
        assert_eq!(c.probs(), vec![1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| c.sample(&mut rng) == YES));
    }

    #[test]
    fn silent_policy_emits_nothing() {
        let init = PolicyInit {
            p_emit_fish: 0.0,
            p_emit_distractor: 0.0,
            p_emit_clutter: 0.0,
            p_consistent: 1.0,
            ..Default::default()
        };
        let policy = ToyPolicy::new(&init).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = parse_response(&sample_response(
            &policy,
            &scene(3),
            THR,
            &Geometry::default(),
            &mut rng,
        ));
        let parsed = out.parsed.unwrap();
        assert!(parsed.detections.is_empty());
        assert_eq!(parsed.fish_count, 0);
    }

    #[test]
    fn sampled_text_always_parses() {
        let policy = ToyPolicy::new(&PolicyInit::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..300 {
            let s = scene(seed);
            let r = sample_rollout(&policy, &s, THR, &Geometry::default(), &mut rng);
            let out = parse_response(&r.text);
            assert!(out.report.structure_ok);
            assert_eq!(out.report.entries_total, out.report.entries_well_formed);
            assert_eq!(out.parsed.unwrap(), r.response);
        }
    }

    #[test]
    fn full_consistency_is_always_aligned() {
        let init = PolicyInit {
            p_consistent: 1.0,
            ..Default::default()
        };
        let policy = ToyPolicy::new(&init).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let responses: Vec<_> = (0..500)
            .map(|i| sample_rollout(&policy, &scene(i), THR, &Geometry::default(), &mut rng).response)
            .collect();
        assert_eq!(alignment_rate(&responses).unwrap(), 1.0);
    }

    #[test]
    fn perturbed_counts_always_differ() {
        let init = PolicyInit {
            p_consistent: 1e-12,
            ..Default::default()
        };
        let policy = ToyPolicy::new(&init).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..500 {
            let r = sample_rollout(&policy, &scene(i), THR, &Geometry::default(), &mut rng).response;
            assert!(!r.is_aligned());
        }
    }

    #[test]
    fn log_prob_matches_manual_product() {
        let policy = ToyPolicy::new(&PolicyInit::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = sample_rollout(&policy, &scene(4), THR, &Geometry::default(), &mut rng);
        let mut manual = 0.0;
        for f in Factor::ALL {
            let p = policy.p(f);
            let [yes, no] = r.counts.0[f.index()];
            manual += f64::from(yes) * p.ln() + f64::from(no) * (1.0 - p).ln();
        }
        assert!((policy.log_prob(&r.counts) - manual).abs() < 1e-9);
        let s = scene(4);
        let drawn: u32 = r.counts.0[..3].iter().map(|c| c[0] + c[1]).sum();
        assert_eq!(drawn as usize, s.candidates.len());
    }
}
