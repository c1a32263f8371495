use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measures::BoundedHistogram;

use super::kernel::LogKernel;
use super::objective::debiased_dual_slices;
use super::sinkhorn::{check_pair, run_log_sinkhorn, SinkhornTrace};
use super::TransportConfig;

/// How the score is differentiated with respect to its two histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Exact reverse-mode through every Sinkhorn round and the dual value.
    #[default]
    Unrolled,
    /// Envelope gradient: differentiate the dual with the scalings held fixed.
    Danskin,
}

impl std::str::FromStr for GradMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "unrolled" => Ok(GradMode::Unrolled),
            "danskin" => Ok(GradMode::Danskin),
            other => Err(format!("unknown gradient mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGrad {
    pub value: f64,
    pub grad_u: Vec<f64>,
    pub grad_v: Vec<f64>,
}

/// Score and its gradient with respect to both histograms.
pub fn distance_backward(
    u: &BoundedHistogram,
    v: &BoundedHistogram,
    config: &TransportConfig,
    mode: GradMode,
) -> Result<DistanceGrad> {
    config.validate()?;
    check_pair(u, v, config)?;
    let kernel = LogKernel::new(config);
    Ok(value_and_grad(u.values(), v.values(), config, &kernel, mode))
}

pub(crate) fn value_and_grad(
    u: &[f64],
    v: &[f64],
    config: &TransportConfig,
    kernel: &LogKernel,
    mode: GradMode,
) -> DistanceGrad {
    let d = u.len();
    let eps = config.epsilon;
    let mut trace = match mode {
        GradMode::Unrolled => Some(SinkhornTrace::default()),
        GradMode::Danskin => None,
    };
    let state = run_log_sinkhorn(u, v, config, kernel, &mut trace);
    let value = debiased_dual_slices(&state, u, v, config, kernel);
    let (x, y) = (&state.log_phi, &state.log_psi);

    // Partial derivatives of the dual value with the scalings held fixed.
    let mut grad_u: Vec<f64> = x.iter().map(|xi| -(-eps * xi).exp_m1()).collect();
    let mut grad_v: Vec<f64> = y.iter().map(|yj| -(-eps * yj).exp_m1()).collect();
    let Some(trace) = trace else {
        return DistanceGrad {
            value,
            grad_u,
            grad_v,
        };
    };

    // Row and column masses of the plan.
    let mut cx = vec![0.0; d];
    let mut cy = vec![0.0; d];
    kernel.log_conv(y, &mut cx);
    kernel.log_conv(x, &mut cy);
    let mut gx: Vec<f64> = (0..d)
        .map(|i| eps * (u[i] * (-eps * x[i]).exp() - (x[i] + cx[i]).exp()))
        .collect();
    let mut gy: Vec<f64> = (0..d)
        .map(|j| eps * (v[j] * (-eps * y[j]).exp() - (y[j] + cy[j]).exp()))
        .collect();

    // Adjoints of log u and log v accumulated over the rounds.
    let scale = 1.0 / (1.0 + eps);
    let mut glu = vec![0.0; d];
    let mut glv = vec![0.0; d];
    let mut gc = vec![0.0; d];
    let rounds = trace.x.len();
    for t in (0..rounds).rev() {
        // y_t = (log v - log K^T exp(x_t)) / (1 + eps)
        for j in 0..d {
            glv[j] += gy[j] * scale;
            gc[j] = -gy[j] * scale;
        }
        kernel.log_conv_adjoint(&gc, &trace.x[t], &trace.cy[t], &mut gx);
        // x_t = (log u - log K exp(y_{t-1})) / (1 + eps), with y_{-1} = 0 fixed
        for i in 0..d {
            glu[i] += gx[i] * scale;
            gc[i] = -gx[i] * scale;
        }
        gy.iter_mut().for_each(|g| *g = 0.0);
        if t > 0 {
            kernel.log_conv_adjoint(&gc, &trace.y[t - 1], &trace.cx[t], &mut gy);
        }
        gx.iter_mut().for_each(|g| *g = 0.0);
    }
    for i in 0..d {
        grad_u[i] += glu[i] / u[i];
        grad_v[i] += glv[i] / v[i];
    }
    DistanceGrad {
        value,
        grad_u,
        grad_v,
    }
}
