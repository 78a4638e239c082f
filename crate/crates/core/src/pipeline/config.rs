use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DEFAULT_LAMBDA, DEFAULT_TAU};
use crate::nn::DEFAULT_HIDDEN_DIM;
use crate::positional::DEFAULT_WALK_LENGTH;

/// Which loss terms drive adaptation and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Contrastive term plus `lambda` times the redundancy term.
    #[default]
    Full,
    ContrastiveOnly,
    /// `lambda` times the redundancy term alone.
    RedundancyOnly,
}

/// Every knob of a run. Missing fields in a config file take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Coding-tree height.
    pub k: usize,
    /// Random-walk length of the positional view.
    pub walk_length: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub tau: f64,
    pub lambda: f64,
    pub epochs_pretrain: usize,
    pub epochs_testtime: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub objective: Objective,
    pub id_train: Option<PathBuf>,
    pub id_test: Option<PathBuf>,
    pub ood_test: Option<PathBuf>,
    /// Where built trees are cached; no caching when unset.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 2,
            walk_length: DEFAULT_WALK_LENGTH,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            output_dim: DEFAULT_HIDDEN_DIM,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            epochs_pretrain: 50,
            epochs_testtime: 20,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
            objective: Objective::Full,
            id_train: None,
            id_test: None,
            ood_test: None,
            cache_dir: None,
        }
    }
}

pub const MIN_HEIGHT: usize = 2;
pub const MAX_HEIGHT: usize = 5;

impl RunConfig {
    /// Parses a config file without validating it, so command-line
    /// overrides can still fix a bad value. Call [`RunConfig::validate`] after.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Zero epochs are allowed and mean "skip that phase".
    pub fn validate(&self) -> Result<()> {
        if !(MIN_HEIGHT..=MAX_HEIGHT).contains(&self.k) {
            return Err(Error::Parameter(format!(
                "tree height k must lie in {MIN_HEIGHT}..={MAX_HEIGHT}, got {}",
                self.k
            )));
        }
        for (name, value) in [
            ("walk_length", self.walk_length),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
        ] {
            if value == 0 {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Parameter(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be non-negative, got {}", self.lr)));
        }
        crate::losses::LossConfig {
            tau: self.tau,
            lambda: self.lambda,
            ..Default::default()
        }
        .validate()
    }
}
