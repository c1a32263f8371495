use rayon::prelude::*;

use crate::error::{Result, WfreError};
use crate::measures::{generalized_kl, BoundedHistogram};

use super::kernel::{pair_cost, DenseMatrix, LogKernel};
use super::sinkhorn::{check_pair, conv_sinkhorn_slices, SinkhornState};
use super::TransportConfig;

fn check_state(state: &SinkhornState, d: usize) -> Result<()> {
    if state.log_phi.len() != d || state.log_psi.len() != d {
        return Err(WfreError::Shape(format!(
            "state of dimension {} used with {d}-bar histograms",
            state.dim()
        )));
    }
    Ok(())
}

/// Pieces of the dual value shared by the reported objective and the score.
///
/// Returns `(marginal terms, plan mass)` where the marginal terms are
/// `<1 - phi^-eps, u> + <1 - psi^-eps, v>`.
fn dual_parts(
    state: &SinkhornState,
    u: &[f64],
    v: &[f64],
    eps: f64,
    kernel: &LogKernel,
) -> (f64, f64) {
    let d = u.len();
    let mut marg = 0.0;
    for i in 0..d {
        marg -= u[i] * (-eps * state.log_phi[i]).exp_m1();
        marg -= v[i] * (-eps * state.log_psi[i]).exp_m1();
    }
    let mut c = vec![0.0; d];
    kernel.log_conv(&state.log_psi, &mut c);
    let mass: f64 = state
        .log_phi
        .iter()
        .zip(&c)
        .map(|(x, ci)| (x + ci).exp())
        .sum();
    (marg, mass)
}

/// Dual objective of the entropic problem,
/// `<1 - phi^-eps, u> + <1 - psi^-eps, v> + eps <1 - phi (x) psi, K>`,
/// evaluated in `O(omega d)` through the banded kernel.
///
/// `phi` and `psi` are the Sinkhorn scalings, so the plan is
/// `diag(phi) K diag(psi)`; `phi = psi = 1` gives zero.
pub fn dual_objective(
    state: &SinkhornState,
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    config: &TransportConfig,
) -> Result<f64> {
    check_pair(u, v, config)?;
    check_state(state, u.dim())?;
    let kernel = LogKernel::new(config);
    let (marg, mass) = dual_parts(state, u.values(), v.values(), config.epsilon, &kernel);
    Ok(marg + config.epsilon * (kernel.kernel_mass(u.dim()) - mass))
}

/// The dual value without the input-independent constant `eps * sum K`.
pub(crate) fn debiased_dual_slices(
    state: &SinkhornState,
    u: &[f64],
    v: &[f64],
    config: &TransportConfig,
    kernel: &LogKernel,
) -> f64 {
    let (marg, mass) = dual_parts(state, u, v, config.epsilon, kernel);
    marg - config.epsilon * mass
}

/// Transport plan `diag(phi) K diag(psi)`.
pub fn recover_plan(
    state: &SinkhornState,
    d: usize,
    config: &TransportConfig,
) -> Result<DenseMatrix> {
    config.check_dim(d)?;
    check_state(state, d)?;
    let kernel = LogKernel::new(config);
    let mut plan = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let lk = kernel.log_entry(i, j, d);
            if lk.is_finite() {
                plan.set(i, j, (state.log_phi[i] + lk + state.log_psi[j]).exp());
            }
        }
    }
    Ok(plan)
}

/// Value of the primal objective for a given plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalObjective {
    pub value: f64,
    /// Set when the plan moves mass along an infinite-cost pair.
    pub infeasible: bool,
}

/// `sum C_ij P_ij + KL(P 1 | u) + KL(P^T 1 | v)`, plus, when `entropic` is
/// set, `eps * sum_ij (P_ij log P_ij - P_ij + exp(-C_ij / eps))`.
///
/// The entropy is taken relative to the Gibbs kernel so that the value at the
/// Sinkhorn optimum coincides with [`dual_objective`].
pub fn primal_objective(
    plan: &DenseMatrix,
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    cost: &DenseMatrix,
    epsilon: f64,
    entropic: bool,
) -> Result<PrimalObjective> {
    let d = u.dim();
    if v.dim() != d
        || plan.rows() != d
        || plan.cols() != d
        || cost.rows() != d
        || cost.cols() != d
    {
        return Err(WfreError::Shape("primal_objective: shape mismatch".into()));
    }
    if plan.as_slice().iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(WfreError::Validation(
            "transport plan must be finite and nonnegative".into(),
        ));
    }
    let mut transport = 0.0;
    let mut entropy = 0.0;
    for i in 0..d {
        for j in 0..d {
            let p = plan.get(i, j);
            let c = cost.get(i, j);
            if c.is_infinite() {
                if p > 0.0 {
                    return Ok(PrimalObjective {
                        value: f64::INFINITY,
                        infeasible: true,
                    });
                }
                continue;
            }
            transport += c * p;
            if entropic {
                let xlogx = if p > 0.0 { p * p.ln() } else { 0.0 };
                entropy += xlogx - p + (-c / epsilon).exp();
            }
        }
    }
    let rows = generalized_kl(&plan.row_sums(), u.values())?;
    let cols = generalized_kl(&plan.col_sums(), v.values())?;
    let mut value = transport + rows + cols;
    if entropic {
        value += epsilon * entropy;
    }
    Ok(PrimalObjective {
        value,
        infeasible: false,
    })
}

/// Scoring function between two histograms: `iterations` rounds of the banded
/// Sinkhorn solver, then the dual value.
///
/// The dual is reported without the constant `eps * sum_ij K_ij`, which does
/// not depend on the inputs; with it removed the score approaches the exact
/// transport distance as `epsilon -> 0` regardless of the dimension.
pub fn wfr_distance(
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    config: &TransportConfig,
) -> Result<f64> {
    config.validate()?;
    check_pair(u, v, config)?;
    let kernel = LogKernel::new(config);
    let state = conv_sinkhorn_slices(u.values(), v.values(), config, &kernel);
    Ok(debiased_dual_slices(
        &state,
        u.values(),
        v.values(),
        config,
        &kernel,
    ))
}

fn batch<F>(q: &BoundedHistogram, candidates: &[BoundedHistogram], config: &TransportConfig, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64], &LogKernel) -> f64 + Sync,
{
    config.validate()?;
    for c in candidates {
        check_pair(q, c, config)?;
    }
    let kernel = LogKernel::new(config);
    Ok(candidates
        .par_iter()
        .map(|c| f(q.values(), c.values(), &kernel))
        .collect())
}

/// `out[k] = wfr_distance(q, candidates[k])`.
pub fn wfr_distance_one_to_many(
    q: &BoundedHistogram,
    candidates: &[BoundedHistogram],
    config: &TransportConfig,
) -> Result<Vec<f64>> {
    batch(q, candidates, config, |q, c, k| {
        let s = conv_sinkhorn_slices(q, c, config, k);
        debiased_dual_slices(&s, q, c, config, k)
    })
}

/// `out[k] = wfr_distance(candidates[k], q)`: the argument order used when
/// entities are scored against a query.
pub fn wfr_distance_many_to_one(
    candidates: &[BoundedHistogram],
    q: &BoundedHistogram,
    config: &TransportConfig,
) -> Result<Vec<f64>> {
    batch(q, candidates, config, |q, c, k| {
        let s = conv_sinkhorn_slices(c, q, config, k);
        debiased_dual_slices(&s, c, q, config, k)
    })
}

/// Exact (unregularized) transport distance between two single-bar masses
/// `bin_gap` bins apart.
///
/// Minimizing `p C + KL(p | u) + KL(p | v)` over the scalar `p` gives
/// `p* = sqrt(uv) exp(-C/2)` and the value `u + v - 2 sqrt(uv) cos(pi/2 * beta gap / omega)`.
pub fn single_dirac_wfr(u_mass: f64, v_mass: f64, bin_gap: usize, omega: usize, beta: f64) -> f64 {
    let c = pair_cost(bin_gap, omega, beta);
    if c.is_infinite() {
        u_mass + v_mass
    } else {
        u_mass + v_mass - 2.0 * (u_mass * v_mass).sqrt() * (-c / 2.0).exp()
    }
}
