use std::f64::consts::FRAC_PI_2;

use crate::error::Result;

use super::TransportConfig;

/// Row-major dense matrix. Only used by the reference solver and for plans.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `y = A x`, accumulated left to right over columns.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (a, b) in self.row(i).iter().zip(x) {
                acc += a * b;
            }
            *yi = acc;
        }
    }

    /// `y = A^T x`.
    pub fn matvec_transposed(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            for (yj, a) in y.iter_mut().zip(self.row(i)) {
                *yj += a * xi;
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a;
            }
        }
        out
    }
}

/// Normalized distance `beta * |k| / omega`; transport is admissible below one.
#[inline]
fn radius_fraction(k: usize, omega: usize, beta: f64) -> f64 {
    beta * k as f64 / omega as f64
}

/// Transport cost between bins `k` apart: `-2 log cos(pi/2 * beta k / omega)`,
/// infinite at or beyond the radius.
pub fn pair_cost(k: usize, omega: usize, beta: f64) -> f64 {
    let t = radius_fraction(k, omega, beta);
    if t >= 1.0 {
        f64::INFINITY
    } else {
        -2.0 * (FRAC_PI_2 * t).cos().ln()
    }
}

/// Kernel weight `cos(pi/2 * beta k / omega)^(2/epsilon)` for bins `k` apart,
/// zero at or beyond the radius.
pub fn kernel_weight(k: usize, config: &TransportConfig) -> f64 {
    let t = radius_fraction(k, config.omega, config.beta);
    if t >= 1.0 {
        0.0
    } else {
        (FRAC_PI_2 * t).cos().powf(2.0 / config.epsilon)
    }
}

/// Log of [`kernel_weight`], evaluated without forming the power so that it
/// stays finite when the weight itself underflows.
fn log_kernel_weight(k: usize, config: &TransportConfig) -> f64 {
    let t = radius_fraction(k, config.omega, config.beta);
    if t >= 1.0 {
        f64::NEG_INFINITY
    } else {
        (2.0 / config.epsilon) * (FRAC_PI_2 * t).cos().ln()
    }
}

/// Full `d x d` cost matrix on the uniform grid (no block masking).
pub fn cost_matrix(d: usize, omega: usize, beta: f64) -> DenseMatrix {
    DenseMatrix::from_fn(d, d, |i, j| pair_cost(i.abs_diff(j), omega, beta))
}

/// Cost matrix of the block-diagonal problem: pairs in different blocks are
/// given infinite cost, matching the zeros of [`kernel_matrix`].
pub fn masked_cost_matrix(d: usize, config: &TransportConfig) -> Result<DenseMatrix> {
    config.check_dim(d)?;
    let a = config.block_size;
    Ok(DenseMatrix::from_fn(d, d, |i, j| {
        if i / a != j / a {
            f64::INFINITY
        } else {
            pair_cost(i.abs_diff(j), config.omega, config.beta)
        }
    }))
}

/// Banded, block-diagonal Gibbs kernel `exp(-C / epsilon)`.
pub fn kernel_matrix(d: usize, config: &TransportConfig) -> Result<DenseMatrix> {
    config.check_dim(d)?;
    let a = config.block_size;
    Ok(DenseMatrix::from_fn(d, d, |i, j| {
        if i / a != j / a {
            0.0
        } else {
            kernel_weight(i.abs_diff(j), config)
        }
    }))
}

/// Convolution taps `H_k` for `k = -omega..=omega`.
pub fn conv_kernel(config: &TransportConfig) -> Vec<f64> {
    let w = config.omega as isize;
    (-w..=w)
        .map(|k| kernel_weight(k.unsigned_abs(), config))
        .collect()
}

/// Log-domain convolution taps restricted to the nonzero part of the window,
/// together with the block layout they are applied over.
#[derive(Debug, Clone)]
pub struct LogKernel {
    /// `taps[k + half_width]` is the log weight for offset `k`.
    taps: Vec<f64>,
    half_width: usize,
    block_size: usize,
}

impl LogKernel {
    pub fn new(config: &TransportConfig) -> Self {
        let mut half_width = 0;
        for k in 1..=config.omega {
            if log_kernel_weight(k, config).is_finite() {
                half_width = k;
            }
        }
        let w = half_width as isize;
        let taps = (-w..=w)
            .map(|k| log_kernel_weight(k.unsigned_abs(), config))
            .collect();
        Self {
            taps,
            half_width,
            block_size: config.block_size,
        }
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Inclusive range of bins that interact with bin `i`.
    #[inline]
    fn window(&self, i: usize, d: usize) -> (usize, usize) {
        let start = (i / self.block_size) * self.block_size;
        let end = (start + self.block_size).min(d) - 1;
        (
            i.saturating_sub(self.half_width).max(start),
            (i + self.half_width).min(end),
        )
    }

    #[inline]
    fn tap(&self, i: usize, j: usize) -> f64 {
        self.taps[j + self.half_width - i]
    }

    /// `out_i = log sum_j K_ij exp(z_j)`, computed with a max shift per row.
    pub fn log_conv(&self, z: &[f64], out: &mut [f64]) {
        let d = z.len();
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.window(i, d);
            let mut m = f64::NEG_INFINITY;
            for j in lo..=hi {
                let s = self.tap(i, j) + z[j];
                if s > m {
                    m = s;
                }
            }
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += (self.tap(i, j) + z[j] - m).exp();
            }
            *o = m + acc.ln();
        }
    }

    /// Reverse-mode of [`LogKernel::log_conv`]: given `g = dL/d out` and the
    /// forward input `z` and output `c`, adds `dL/dz` into `acc`.
    pub fn log_conv_adjoint(&self, g: &[f64], z: &[f64], c: &[f64], acc: &mut [f64]) {
        let d = z.len();
        for (j, aj) in acc.iter_mut().enumerate() {
            let (lo, hi) = self.window(j, d);
            let mut s = 0.0;
            for i in lo..=hi {
                if g[i] != 0.0 {
                    s += g[i] * (self.tap(i, j) + z[j] - c[i]).exp();
                }
            }
            *aj += s;
        }
    }

    /// `sum_ij K_ij` for a histogram of dimension `d`.
    pub fn kernel_mass(&self, d: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..d {
            let (lo, hi) = self.window(i, d);
            for j in lo..=hi {
                total += self.tap(i, j).exp();
            }
        }
        total
    }

    /// Log kernel entry for bins `i` and `j` (negative infinity outside the
    /// band or across blocks).
    pub fn log_entry(&self, i: usize, j: usize, d: usize) -> f64 {
        let (lo, hi) = self.window(i, d);
        if j < lo || j > hi {
            f64::NEG_INFINITY
        } else {
            self.tap(i, j)
        }
    }
}
