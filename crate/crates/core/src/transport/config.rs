use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};

/// Hyperparameters of the scoring function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    /// Entropic regularization strength.
    pub epsilon: f64,
    /// Transport window in grid units.
    pub omega: usize,
    /// Radius correction in `(1 - 1/(omega+1), 1]`.
    pub beta: f64,
    /// Number of diagonal blocks `b`.
    pub block_count: usize,
    /// Bars per block `a`; `a * b` must equal the histogram dimension.
    pub block_size: usize,
    /// Sinkhorn rounds.
    pub iterations: usize,
    /// Floor on the denominators of the dense scaling updates.
    pub denom_floor: f64,
    /// Optional early stop on the largest change of a log-scaling between rounds.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            omega: 3,
            beta: 1.0,
            block_count: 1,
            block_size: 5,
            iterations: 10,
            denom_floor: 1e-30,
            tolerance: None,
        }
    }
}

impl TransportConfig {
    /// Configuration for histograms of dimension `dim` split into blocks of
    /// `block_size` bars.
    pub fn for_dim(
        dim: usize,
        block_size: usize,
        omega: usize,
        epsilon: f64,
        iterations: usize,
    ) -> Result<Self> {
        if block_size == 0 || dim % block_size != 0 {
            return Err(WfreError::Shape(format!(
                "dimension {dim} is not divisible by block size {block_size}"
            )));
        }
        let cfg = Self {
            epsilon,
            omega,
            block_count: dim / block_size,
            block_size,
            iterations,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }

    pub fn dim(&self) -> usize {
        self.block_count * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(WfreError::Validation(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.omega == 0 {
            return Err(WfreError::Validation("omega must be at least 1".into()));
        }
        let lower = 1.0 - 1.0 / (self.omega as f64 + 1.0);
        if !(self.beta > lower && self.beta <= 1.0) {
            return Err(WfreError::Validation(format!(
                "beta must lie in ({lower}, 1], got {}",
                self.beta
            )));
        }
        if self.block_count == 0 || self.block_size == 0 {
            return Err(WfreError::Validation(
                "block count and block size must be positive".into(),
            ));
        }
        // Equality is accepted: a block of exactly omega bars still holds a full
        // half-window on each side of its centre for beta = 1.
        if self.block_size < self.omega {
            return Err(WfreError::Validation(format!(
                "block size {} is smaller than the window {}",
                self.block_size, self.omega
            )));
        }
        if self.iterations == 0 {
            return Err(WfreError::Validation("iterations must be at least 1".into()));
        }
        if !(self.denom_floor > 0.0) {
            return Err(WfreError::Validation("denom_floor must be positive".into()));
        }
        if let Some(tol) = self.tolerance {
            if !(tol > 0.0) {
                return Err(WfreError::Validation("tolerance must be positive".into()));
            }
        }
        Ok(())
    }

    /// Checks that histograms of dimension `d` can be scored under this
    /// configuration.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.block_count * self.block_size != d {
            return Err(WfreError::Shape(format!(
                "dimension {d} does not match {} blocks of {} bars",
                self.block_count, self.block_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_best_reported_settings() {
        let c = TransportConfig::default();
        assert_eq!(c.epsilon, 0.1);
        assert_eq!(c.omega, 3);
        assert_eq!(c.block_size, 5);
        assert_eq!(c.iterations, 10);
        assert_eq!(c.beta, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TransportConfig::default();
        c.beta = 0.7; // lower bound for omega=3 is 0.75
        assert!(c.validate().is_err());
        let mut c = TransportConfig::default();
        c.block_size = 2;
        assert!(c.validate().is_err());
        assert!(TransportConfig::for_dim(10, 3, 3, 0.1, 10).is_err());
    }

    #[test]
    fn block_size_equal_to_window_is_accepted() {
        let c = TransportConfig::for_dim(12, 3, 3, 0.1, 10).unwrap();
        assert_eq!(c.block_count, 4);
        c.check_dim(12).unwrap();
        assert!(c.check_dim(16).is_err());
    }
}
