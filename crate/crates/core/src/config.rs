//! Flat run configuration, read from TOML and overridable per key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::fuzzy::TNormKind;
use crate::model::ModelShape;
use crate::query::UnionMode;
use crate::training::TrainConfig;
use crate::transport::{GradMode, TransportConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Valid,
    #[default]
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "valid" => Ok(EvalSplit::Valid),
            "test" => Ok(EvalSplit::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Valid => "valid",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub k_neg: usize,
    pub weight_decay: f64,
    pub drop_p: f64,
    pub drop_n: f64,
    pub dim: usize,
    pub bases: usize,
    pub layers: usize,
    pub margin: f64,
    pub scale: f64,
    pub block_size: usize,
    pub window: usize,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub beta: f64,
    pub tnorm: TNormKind,
    pub union_mode: UnionMode,
    pub grad_mode: GradMode,
    pub batch_size: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Validation MRR is computed every this many steps; 0 disables it.
    pub valid_every: usize,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub eval_split: EvalSplit,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let tr = TransportConfig::default();
        Self {
            learning_rate: t.learning_rate,
            steps: t.steps,
            k_neg: t.k_neg,
            weight_decay: t.weight_decay,
            drop_p: t.drop_p,
            drop_n: t.drop_n,
            dim: 1600,
            bases: 120,
            layers: 1,
            margin: t.margin,
            scale: t.scale,
            block_size: tr.block_size,
            window: tr.omega,
            epsilon: tr.epsilon,
            sinkhorn_iters: tr.iterations,
            beta: tr.beta,
            tnorm: t.tnorm,
            union_mode: t.union_mode,
            grad_mode: t.grad_mode,
            batch_size: t.batch_size,
            seed: t.seed,
            log_every: t.log_every,
            valid_every: 0,
            data_dir: None,
            checkpoint: None,
            eval_split: EvalSplit::Test,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| WfreError::Validation(format!("invalid config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| WfreError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn transport(&self) -> Result<TransportConfig> {
        let mut t = TransportConfig::for_dim(self.dim, self.block_size, self.window, self.epsilon, self.sinkhorn_iters)?;
        t.beta = self.beta;
        t.validate()?;
        Ok(t)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            steps: self.steps,
            k_neg: self.k_neg,
            margin: self.margin,
            scale: self.scale,
            drop_p: self.drop_p,
            drop_n: self.drop_n,
            tnorm: self.tnorm,
            union_mode: self.union_mode,
            transport: self.transport()?,
            grad_mode: self.grad_mode,
            batch_size: self.batch_size,
            seed: self.seed,
            log_every: self.log_every,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_shape(&self, entities: usize, relations: usize) -> ModelShape {
        ModelShape {
            entities,
            relations,
            dim: self.dim,
            bases: self.bases,
            layers: self.layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.bases == 0 || self.layers == 0 {
            return Err(WfreError::Validation("dim, bases and layers must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(WfreError::Validation("threads must be positive".into()));
        }
        self.train_config().map(|_| ())
    }

    /// The fields that determine the model's shape and scoring, for
    /// checkpoint fingerprints.
    pub fn model_fingerprint(&self) -> String {
        crate::model::config_fingerprint(&(
            self.dim,
            self.bases,
            self.layers,
            self.block_size,
            self.window,
            self.epsilon,
            self.sinkhorn_iters,
            self.beta,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = RunConfig::default();
        assert_eq!(c.learning_rate, 5e-4);
        assert_eq!(c.k_neg, 32);
        assert_eq!(c.weight_decay, 0.01);
        assert_eq!((c.drop_p, c.drop_n), (0.05, 0.1));
        assert_eq!(c.margin, 37.5);
        assert_eq!((c.block_size, c.window, c.epsilon, c.sinkhorn_iters), (5, 3, 0.1, 10));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::from_toml_str("dim = 64\nblock_size = 8\ntnorm = \"godel\"\nunion_mode = \"dm\"\n").unwrap();
        assert_eq!(c.dim, 64);
        assert_eq!(c.tnorm, TNormKind::Godel);
        assert_eq!(c.union_mode, UnionMode::Dm);
        assert_eq!(c.margin, 37.5);
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        assert!(RunConfig::from_toml_str("lerning_rate = 1.0").is_err());
        assert!(RunConfig::from_toml_str("dim = \"big\"").is_err());
    }

    #[test]
    fn validation_catches_bad_combinations() {
        let c = RunConfig {
            dim: 64,
            block_size: 5,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            margin: -1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        assert_ne!(
            RunConfig::default().model_fingerprint(),
            RunConfig { dim: 800, ..RunConfig::default() }.model_fingerprint()
        );
    }
}
