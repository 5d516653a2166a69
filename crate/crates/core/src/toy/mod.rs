//! Synthetic detect-to-count environment with an exact categorical policy.

pub mod ablation;
pub mod policy;
pub mod scene;
pub mod train;

pub use ablation::{run_ablation, AblationRow, AblationSetting};
pub use policy::{
    sample_response, sample_rollout, Categorical, ChoiceCounts, Factor, Geometry, PolicyInit, Rollout, ToyPolicy,
};
pub use scene::{generate_scene, Candidate, CandidateKind, SceneParams, SyntheticScene};
pub use train::{eval_scenes, evaluate_policy, train_toy_grpo, EvalSummary, TrainConfig, TrainOutcome, TrainRecord};
