//! TOML configuration shared by every subcommand.
//!
//! ```toml
//! [reward]
//! w1 = 1.0
//! match_threshold = "5%"
//!
//! [grpo]
//! kl_beta = 0.01
//!
//! [env]
//! difficulty = 0.5
//!
//! [train]
//! epochs = 200
//! ```
//!
//! Missing sections and keys take their defaults; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::reward::RewardConfig;
use crate::toy::{train_toy_grpo, SceneParams, TrainConfig, TrainOutcome};

/// Names the config file used when no path is given explicitly.
pub const CONFIG_ENV: &str = "FISHCOUNT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub env: SceneParams,
    pub train: TrainConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.grpo.validate()?;
        self.env.validate()?;
        self.train.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::file(path, e))
    }

    /// Reads `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::read(&path),
            None => Ok(Self::default()),
        }
    }

    pub fn train_toy(&self) -> Result<TrainOutcome> {
        train_toy_grpo(&self.grpo, &self.reward, &self.env, &self.train)
    }
}
