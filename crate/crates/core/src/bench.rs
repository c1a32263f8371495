//! Wall-clock comparison of the banded and dense Sinkhorn solvers.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::measures::BoundedHistogram;
use crate::transport::{conv_sinkhorn, dense_sinkhorn, kernel_matrix, TransportConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Conv,
    Dense,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Conv => "conv",
            Solver::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub omegas: Vec<usize>,
    pub solvers: Vec<Solver>,
    pub iterations: usize,
    pub epsilon: f64,
    /// Independent timing rounds; the fastest is reported.
    pub repeats: usize,
    /// Each round repeats the solve until at least this much time has passed.
    pub min_round: Duration,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![256, 512, 1024, 2048, 4096, 8192],
            omegas: vec![1, 3, 5],
            solvers: vec![Solver::Conv, Solver::Dense],
            iterations: 10,
            epsilon: 0.1,
            repeats: 5,
            min_round: Duration::from_millis(20),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub solver: Solver,
    pub dim: usize,
    pub omega: usize,
    pub blocks: usize,
    pub iterations: usize,
    pub seconds: f64,
}

fn random_histogram(d: usize, rng: &mut ChaCha8Rng) -> Result<BoundedHistogram> {
    BoundedHistogram::new((0..d).map(|_| rng.gen_range(0.01..1.0)).collect())
}

// Repeats `f` until the round lasts `min_round`, returns seconds per call.
fn time_round(min_round: Duration, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    let mut calls = 0u32;
    loop {
        f()?;
        calls += 1;
        let elapsed = start.elapsed();
        if elapsed >= min_round {
            return Ok(elapsed.as_secs_f64() / calls as f64);
        }
    }
}

/// Times one solver on one `(d, omega)` cell, using a single block.
pub fn bench_cell(
    solver: Solver,
    dim: usize,
    omega: usize,
    config: &BenchConfig,
) -> Result<BenchRow> {
    if config.repeats == 0 {
        return Err(WfreError::Validation("repeats must be positive".into()));
    }
    let transport = TransportConfig::for_dim(dim, dim, omega, config.epsilon, config.iterations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ((dim as u64) << 8) ^ omega as u64);
    let u = random_histogram(dim, &mut rng)?;
    let v = random_histogram(dim, &mut rng)?;
    let kernel = match solver {
        Solver::Dense => Some(kernel_matrix(dim, &transport)?),
        Solver::Conv => None,
    };
    let mut best = f64::INFINITY;
    for _ in 0..config.repeats {
        let secs = time_round(config.min_round, || {
            let state = match &kernel {
                Some(k) => dense_sinkhorn(&u, &v, k, config.epsilon, config.iterations)?,
                None => conv_sinkhorn(&u, &v, &transport)?,
            };
            std::hint::black_box(state);
            Ok(())
        })?;
        best = best.min(secs);
    }
    Ok(BenchRow {
        solver,
        dim,
        omega,
        blocks: transport.block_count,
        iterations: config.iterations,
        seconds: best,
    })
}

pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &solver in &config.solvers {
        for &omega in &config.omegas {
            for &dim in &config.dims {
                rows.push(bench_cell(solver, dim, omega, config)?);
            }
        }
    }
    Ok(rows)
}

pub fn bench_to_tsv(rows: &[BenchRow]) -> String {
    let mut out = String::from("impl\td\tomega\tb\tL\tseconds\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6e}\n",
            r.solver.name(),
            r.dim,
            r.omega,
            r.blocks,
            r.iterations,
            r.seconds
        ));
    }
    out
}

/// Time ratios between consecutive dimensions of one solver and window,
/// as `(d, 2d, t(2d) / t(d))`.
pub fn doubling_ratios(rows: &[BenchRow], solver: Solver, omega: usize) -> Vec<(usize, usize, f64)> {
    let mut cells: Vec<&BenchRow> = rows
        .iter()
        .filter(|r| r.solver == solver && r.omega == omega)
        .collect();
    cells.sort_by_key(|r| r.dim);
    cells
        .windows(2)
        .filter(|w| w[1].dim == 2 * w[0].dim)
        .map(|w| (w[0].dim, w[1].dim, w[1].seconds / w[0].seconds))
        .collect()
}
