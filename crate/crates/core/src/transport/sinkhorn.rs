use crate::error::{Result, WfreError};
use crate::measures::BoundedHistogram;

use super::kernel::{DenseMatrix, LogKernel};
use super::TransportConfig;

/// Dual scalings after a Sinkhorn run.
///
/// The scalings are stored as logarithms: for small `epsilon` they reach
/// magnitudes far outside the `f64` range even though the plan they induce is
/// perfectly ordinary.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub log_phi: Vec<f64>,
    pub log_psi: Vec<f64>,
    pub iterations_run: usize,
}

impl SinkhornState {
    /// All-ones scalings.
    pub fn ones(d: usize) -> Self {
        Self {
            log_phi: vec![0.0; d],
            log_psi: vec![0.0; d],
            iterations_run: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.log_phi.len()
    }

    /// `phi` on the linear scale. May overflow for very small `epsilon`.
    pub fn phi(&self) -> Vec<f64> {
        self.log_phi.iter().map(|v| v.exp()).collect()
    }

    pub fn psi(&self) -> Vec<f64> {
        self.log_psi.iter().map(|v| v.exp()).collect()
    }
}

/// Reference solver: the scaling updates
/// `phi <- (u / K psi)^(1/(1+eps))`, `psi <- (v / K^T phi)^(1/(1+eps))`
/// against an explicit kernel matrix, starting from `psi = 1`.
///
/// Works on the linear scale, so it is only usable while the scalings stay
/// representable (roughly `epsilon >= 0.05` for histograms floored at 1e-6).
/// Denominators are floored at 1e-30; an isolated floor-mass bar at
/// `omega = 1` can push `K psi` below that, and the iterates then part from
/// the log-domain solver.
pub fn dense_sinkhorn(
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    kernel: &DenseMatrix,
    epsilon: f64,
    iterations: usize,
) -> Result<SinkhornState> {
    dense_sinkhorn_with(u, v, kernel, epsilon, iterations, 1e-30, None)
}

pub(crate) fn dense_sinkhorn_with(
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    kernel: &DenseMatrix,
    epsilon: f64,
    iterations: usize,
    denom_floor: f64,
    tolerance: Option<f64>,
) -> Result<SinkhornState> {
    let d = u.dim();
    if v.dim() != d || kernel.rows() != d || kernel.cols() != d {
        return Err(WfreError::Shape(format!(
            "dense_sinkhorn: histograms of {} and {} bars against a {}x{} kernel",
            d,
            v.dim(),
            kernel.rows(),
            kernel.cols()
        )));
    }
    if kernel.as_slice().iter().any(|&k| k < 0.0) {
        return Err(WfreError::Validation("kernel must be nonnegative".into()));
    }
    let power = 1.0 / (1.0 + epsilon);
    let (u, v) = (u.values(), v.values());
    let mut phi = vec![1.0; d];
    let mut psi = vec![1.0; d];
    let mut buf = vec![0.0; d];
    let mut prev_phi = vec![0.0; d];
    let mut prev_psi = vec![0.0; d];
    let mut run = 0;
    for _ in 0..iterations {
        prev_phi.copy_from_slice(&phi);
        prev_psi.copy_from_slice(&psi);
        kernel.matvec(&psi, &mut buf);
        for i in 0..d {
            phi[i] = (u[i] / buf[i].max(denom_floor)).powf(power);
        }
        kernel.matvec_transposed(&phi, &mut buf);
        for j in 0..d {
            psi[j] = (v[j] / buf[j].max(denom_floor)).powf(power);
        }
        run += 1;
        if let Some(tol) = tolerance {
            let change = phi
                .iter()
                .zip(&prev_phi)
                .chain(psi.iter().zip(&prev_psi))
                .map(|(a, b)| (a.ln() - b.ln()).abs())
                .fold(0.0, f64::max);
            if change < tol {
                break;
            }
        }
    }
    Ok(SinkhornState {
        log_phi: phi.iter().map(|p| p.ln()).collect(),
        log_psi: psi.iter().map(|p| p.ln()).collect(),
        iterations_run: run,
    })
}

pub(crate) fn check_pair(
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    config: &TransportConfig,
) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(WfreError::Shape(format!(
            "histograms have {} and {} bars",
            u.dim(),
            v.dim()
        )));
    }
    config.check_dim(u.dim())
}

/// Banded solver: the same updates as [`dense_sinkhorn`] with the kernel
/// applied as a per-block windowed convolution, in the log domain.
pub fn conv_sinkhorn(
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    config: &TransportConfig,
) -> Result<SinkhornState> {
    config.validate()?;
    check_pair(u, v, config)?;
    let kernel = LogKernel::new(config);
    Ok(conv_sinkhorn_slices(u.values(), v.values(), config, &kernel))
}

pub(crate) fn conv_sinkhorn_slices(
    u: &[f64],
    v: &[f64],
    config: &TransportConfig,
    kernel: &LogKernel,
) -> SinkhornState {
    let mut trace = None;
    run_log_sinkhorn(u, v, config, kernel, &mut trace)
}

/// Iterates recorded for reverse-mode differentiation.
#[derive(Debug, Default)]
pub(crate) struct SinkhornTrace {
    /// `x[t]` are the log-scalings `log phi` after round `t + 1`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// `cx[t] = log(K psi)` used to produce `x[t]`.
    pub cx: Vec<Vec<f64>>,
    /// `cy[t] = log(K^T phi)` used to produce `y[t]`.
    pub cy: Vec<Vec<f64>>,
}

pub(crate) fn run_log_sinkhorn(
    u: &[f64],
    v: &[f64],
    config: &TransportConfig,
    kernel: &LogKernel,
    trace: &mut Option<SinkhornTrace>,
) -> SinkhornState {
    let d = u.len();
    let scale = 1.0 / (1.0 + config.epsilon);
    let log_floor = config.denom_floor.ln();
    let lu: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let lv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut run = 0;
    for _ in 0..config.iterations {
        kernel.log_conv(&y, &mut c);
        let mut change: f64 = 0.0;
        for i in 0..d {
            // The diagonal tap is one, so c is finite unless y underflowed.
            let ci = if c[i].is_finite() { c[i] } else { log_floor };
            let next = (lu[i] - ci) * scale;
            change = change.max((next - x[i]).abs());
            x[i] = next;
        }
        if let Some(t) = trace.as_mut() {
            t.cx.push(c.clone());
            t.x.push(x.clone());
        }
        kernel.log_conv(&x, &mut c);
        for j in 0..d {
            let cj = if c[j].is_finite() { c[j] } else { log_floor };
            let next = (lv[j] - cj) * scale;
            change = change.max((next - y[j]).abs());
            y[j] = next;
        }
        if let Some(t) = trace.as_mut() {
            t.cy.push(c.clone());
            t.y.push(y.clone());
        }
        run += 1;
        if let Some(tol) = config.tolerance {
            if run > 1 && change < tol {
                break;
            }
        }
    }
    SinkhornState {
        log_phi: x,
        log_psi: y,
        iterations_run: run,
    }
}
