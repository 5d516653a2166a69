use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{distance, Point};

/// Visual class of a candidate site. The policy sees the class, never
/// whether the site is a real fish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Fish,
    /// Fish-like non-target (rock, shadow, debris).
    Distractor,
    /// Background texture.
    Clutter,
}

impl CandidateKind {
    pub const ALL: [CandidateKind; 3] = [CandidateKind::Fish, CandidateKind::Distractor, CandidateKind::Clutter];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: Point,
    pub kind: CandidateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub width: u32,
    pub height: u32,
    pub min_fish: usize,
    pub max_fish: usize,
    /// Upper bound on distractors at difficulty 1.
    pub max_distractors: usize,
    pub n_clutter: usize,
    /// In [0, 1]: scales distractor density and tightens fish spacing.
    pub difficulty: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            min_fish: 1,
            max_fish: 8,
            max_distractors: 6,
            n_clutter: 4,
            difficulty: 0.5,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::Config(format!(
                "scenes must be at least 64x64, got {}x{}",
                self.width, self.height
            )));
        }
        if self.min_fish > self.max_fish {
            return Err(Error::Config(format!(
                "min_fish {} exceeds max_fish {}",
                self.min_fish, self.max_fish
            )));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!(
                "difficulty must lie in [0, 1], got {}",
                self.difficulty
            )));
        }
        Ok(())
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn distractor_cap(&self) -> usize {
        (self.max_distractors as f64 * self.difficulty).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub image_size: (u32, u32),
    pub gt_points: Vec<Point>,
    pub distractor_points: Vec<Point>,
    /// Every site the policy may emit at, in presentation order.
    pub candidates: Vec<Candidate>,
    pub difficulty: f64,
    pub seed: u64,
}

const MARGIN: f64 = 4.0;
const MAX_TRIES: usize = 10_000;

/// Deterministic scene for `seed`. Non-fish sites keep at least
/// `2·threshold` from every fish so they can never count as hits.
pub fn generate_scene(seed: u64, params: &SceneParams, threshold: f64) -> Result<SyntheticScene> {
    params.validate()?;
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fish = rng.gen_range(params.min_fish..=params.max_fish);
    let n_distractors = rng.gen_range(0..=params.distractor_cap());

    let separation = 2.0 * threshold;
    let fish_spacing = separation * (1.0 - 0.5 * params.difficulty);
    let (w, h) = (f64::from(params.width), f64::from(params.height));

    let place = |rng: &mut ChaCha8Rng, ok: &dyn Fn(Point) -> bool| -> Result<Point> {
        for _ in 0..MAX_TRIES {
            let p = (rng.gen_range(MARGIN..w - MARGIN), rng.gen_range(MARGIN..h - MARGIN));
            if ok(p) {
                return Ok(p);
            }
        }
        Err(Error::Config("scene too crowded to place all candidates".into()))
    };

    let mut fish: Vec<Point> = Vec::with_capacity(n_fish);
    for _ in 0..n_fish {
        let p = place(&mut rng, &|p| fish.iter().all(|&f| distance(p, f) >= fish_spacing))?;
        fish.push(p);
    }
    let mut others: Vec<Point> = Vec::new();
    let far_from_all = |p: Point, fish: &[Point], others: &[Point]| {
        fish.iter().all(|&f| distance(p, f) >= separation) && others.iter().all(|&o| distance(p, o) >= fish_spacing)
    };
    for _ in 0..n_distractors + params.n_clutter {
        let p = place(&mut rng, &|p| far_from_all(p, &fish, &others))?;
        others.push(p);
    }
    let (distractors, clutter) = others.split_at(n_distractors);

    let mut candidates: Vec<Candidate> = fish
        .iter()
        .map(|&point| Candidate {
            point,
            kind: CandidateKind::Fish,
        })
        .chain(distractors.iter().map(|&point| Candidate {
            point,
            kind: CandidateKind::Distractor,
        }))
        .chain(clutter.iter().map(|&point| Candidate {
            point,
            kind: CandidateKind::Clutter,
        }))
        .collect();
    candidates.shuffle(&mut rng);

    Ok(SyntheticScene {
        image_size: params.image_size(),
        gt_points: fish,
        distractor_points: distractors.to_vec(),
        candidates,
        difficulty: params.difficulty,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const THR: f64 = 9.0;

    #[test]
    fn no_fish_when_capped_at_zero() {
        let params = SceneParams {
            min_fish: 0,
            max_fish: 0,
            ..Default::default()
        };
        assert!(generate_scene(0, &params, THR).unwrap().gt_points.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(7, &p, THR).unwrap(), generate_scene(7, &p, THR).unwrap());
        assert_ne!(
            generate_scene(7, &p, THR).unwrap().gt_points,
            generate_scene(8, &p, THR).unwrap().gt_points
        );
    }

    #[test]
    fn invariants_hold_over_many_seeds() {
        let p = SceneParams {
            difficulty: 1.0,
            ..Default::default()
        };
        for seed in 0..200 {
            let s = generate_scene(seed, &p, THR).unwrap();
            assert!((p.min_fish..=p.max_fish).contains(&s.gt_points.len()));
            for c in &s.candidates {
                assert!((0.0..=128.0).contains(&c.point.0) && (0.0..=128.0).contains(&c.point.1));
            }
            for d in &s.distractor_points {
                assert!(s.gt_points.iter().all(|&g| distance(*d, g) >= 2.0 * THR));
            }
            let n = |k| s.candidates.iter().filter(|c| c.kind == k).count();
            assert_eq!(n(CandidateKind::Fish), s.gt_points.len());
            assert_eq!(n(CandidateKind::Distractor), s.distractor_points.len());
            assert_eq!(n(CandidateKind::Clutter), p.n_clutter);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            SceneParams {
                width: 32,
                ..Default::default()
            },
            SceneParams {
                min_fish: 5,
                max_fish: 2,
                ..Default::default()
            },
            SceneParams {
                difficulty: 1.5,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(generate_scene(0, &p, THR).is_err());
        }
        assert!(generate_scene(0, &SceneParams::default(), 0.0).is_err());
        let crowded = SceneParams {
            min_fish: 200,
            max_fish: 200,
            ..Default::default()
        };
        assert!(generate_scene(0, &crowded, THR).is_err());
    }
}
