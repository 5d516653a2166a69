//! Verifiable rewards, GRPO objective math and evaluation metrics for
//! detect-then-count fish counting.
//!
//! Model output is three tagged blocks:
//!
//! ```text
//! <think>free text</think>
//! <detection>[{"bbox_2d": [x1, y1, x2, y2], "point_2d": [x, y], "label": "fish"}, …]</detection>
//! <fish_count>n</fish_count>
//! ```
//!
//! [`parser`] turns text into a [`ParsedResponse`], [`reward`] scores it
//! against point annotations using [`matching`], and [`grpo`] turns group
//! rewards into advantages and the clipped objective. [`toy`] exercises all
//! of it end to end on synthetic scenes.

pub mod config;
pub mod dataset;
pub mod error;
pub mod grpo;
pub mod matching;
pub mod metrics;
pub mod parser;
pub mod protocol;
pub mod reward;
pub mod toy;

pub use config::{Config, CONFIG_ENV};
pub use dataset::{read_predictions, GroundTruthFile, GroundTruthRecord, PredictionLine, PredictionRecord};
pub use error::{Error, Result};
pub use grpo::{group_advantages, grpo_objective, GrpoConfig, RolloutGroup};
pub use matching::{hungarian_min_cost, match_points, CostMatrix, MatchResult, MatchThreshold, Point};
pub use metrics::{evaluate, MetricsReport};
pub use parser::{parse_response, serialize_response, Detection, FormatReport, ParseOutcome, ParsedResponse};
pub use protocol::{handle_line, score_request, ErrorResponse, RewardOverrides, ScoreRequest, ScoreResponse};
pub use reward::{score_text, total_reward, RewardBreakdown, RewardConfig, RewardContext, Scored};
