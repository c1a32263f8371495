//! Entropic Wasserstein-Fisher-Rao transport between histograms on a shared
//! 1-D grid.
//!
//! Two solver routes are provided. [`dense_sinkhorn`] runs the textbook
//! scaling iterations against a materialized `d x d` kernel and serves as the
//! reference. [`conv_sinkhorn`] exploits the banded, block-diagonal kernel and
//! runs the same iterations as a windowed 1-D convolution in the log domain,
//! which costs `O(omega * d)` per iteration and stays finite for small
//! `epsilon`.

mod config;
mod grad;
mod kernel;
mod objective;
mod sinkhorn;

pub use config::TransportConfig;
pub use grad::{distance_backward, DistanceGrad, GradMode};
pub use kernel::{
    conv_kernel, cost_matrix, kernel_matrix, kernel_weight, masked_cost_matrix, DenseMatrix,
    LogKernel,
};
pub use objective::{
    dual_objective, primal_objective, recover_plan, single_dirac_wfr, wfr_distance,
    wfr_distance_many_to_one, wfr_distance_one_to_many, PrimalObjective,
};
pub use sinkhorn::{conv_sinkhorn, dense_sinkhorn, SinkhornState};

pub(crate) use sinkhorn::{check_pair, conv_sinkhorn_slices};

use crate::error::Result;
use crate::measures::BoundedHistogram;

/// A transport configuration bundled with its precomputed log-kernel taps.
///
/// Scoring many pairs under one configuration should go through a `Scorer`
/// so the kernel is built once.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: TransportConfig,
    kernel: LogKernel,
}

impl Scorer {
    pub fn new(config: TransportConfig) -> Result<Self> {
        config.validate()?;
        let kernel = LogKernel::new(&config);
        Ok(Self { config, kernel })
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    pub fn kernel(&self) -> &LogKernel {
        &self.kernel
    }

    pub fn distance(&self, u: &BoundedHistogram, v: &BoundedHistogram) -> Result<f64> {
        check_pair(u, v, &self.config)?;
        Ok(self.distance_slices(u.values(), v.values()))
    }

    /// Distance on raw slices whose shape has already been checked.
    pub(crate) fn distance_slices(&self, u: &[f64], v: &[f64]) -> f64 {
        let state = conv_sinkhorn_slices(u, v, &self.config, &self.kernel);
        objective::debiased_dual_slices(&state, u, v, &self.config, &self.kernel)
    }

    pub(crate) fn value_and_grad_slices(
        &self,
        u: &[f64],
        v: &[f64],
        mode: GradMode,
    ) -> DistanceGrad {
        grad::value_and_grad(u, v, &self.config, &self.kernel, mode)
    }
}
