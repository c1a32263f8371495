//! Window and block-size sweep: one small model trained per cell.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{Result, WfreError};
use crate::eval::evaluate;
use crate::kg::QuerySample;
use crate::model::ModelParams;
use crate::query::QueryType;
use crate::training::{train, NoCallbacks};

/// Query types used for training; the union shapes are only evaluated.
pub const TRAIN_TYPES: [QueryType; 10] = [
    QueryType::P1,
    QueryType::P2,
    QueryType::P3,
    QueryType::I2,
    QueryType::I3,
    QueryType::In2,
    QueryType::In3,
    QueryType::Inp,
    QueryType::Pin,
    QueryType::Pni,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Settings shared by every cell; `window` and `block_size` are overridden.
    pub base: RunConfig,
    pub omegas: Vec<usize>,
    pub block_sizes: Vec<usize>,
    /// Block size held fixed during the window sweep.
    pub fixed_block_size: usize,
    /// Window held fixed during the block-size sweep.
    pub fixed_omega: usize,
    pub train_types: Vec<QueryType>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            base: RunConfig {
                dim: 80,
                steps: 2000,
                ..RunConfig::default()
            },
            omegas: vec![1, 2, 3, 4, 5],
            block_sizes: vec![4, 5, 8, 10, 16],
            fixed_block_size: 5,
            fixed_omega: 3,
            train_types: TRAIN_TYPES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub omega: usize,
    pub block_size: usize,
    /// `None` when no evaluated type falls in the group.
    pub a_p: Option<f64>,
    pub a_n: Option<f64>,
}

impl AblationConfig {
    /// The window sweep followed by the block-size sweep, without repeating
    /// the shared cell.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut cells: Vec<(usize, usize)> =
            self.omegas.iter().map(|&w| (w, self.fixed_block_size)).collect();
        for &a in &self.block_sizes {
            if !cells.contains(&(self.fixed_omega, a)) {
                cells.push((self.fixed_omega, a));
            }
        }
        cells
    }
}

/// Trains and scores one `(omega, block_size)` cell. Every cell uses the same
/// seeds, so only the swept knob differs.
pub fn run_cell(
    dataset: &Dataset,
    base: &RunConfig,
    train_types: &[QueryType],
    omega: usize,
    block_size: usize,
) -> Result<AblationRow> {
    let run = RunConfig {
        window: omega,
        block_size,
        ..base.clone()
    };
    run.validate()?;
    let train_cfg = run.train_config()?;
    let train_q: Vec<QuerySample> = train_types
        .iter()
        .flat_map(|&t| dataset.queries("train", t).iter().cloned())
        .collect();
    let eval_q = dataset.split_queries(run.eval_split.name());
    if train_q.is_empty() || eval_q.is_empty() {
        return Err(WfreError::Validation("ablation needs training and evaluation queries".into()));
    }
    let shape = run.model_shape(dataset.test.entity_count(), dataset.test.relation_count());
    let model = ModelParams::init(shape, run.seed)?;
    let outcome = train(model, &train_q, &train_cfg, &mut NoCallbacks)?;
    let report = evaluate(&outcome.model, &eval_q, &train_cfg.transport, run.union_mode, run.tnorm)?;
    Ok(AblationRow {
        omega,
        block_size,
        a_p: report.a_p,
        a_n: report.a_n,
    })
}

pub fn run_ablation(dataset: &Dataset, config: &AblationConfig) -> Result<Vec<AblationRow>> {
    config
        .cells()
        .into_iter()
        .map(|(w, a)| run_cell(dataset, &config.base, &config.train_types, w, a))
        .collect()
}

pub fn ablation_to_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("omega\ta\tA_P\tA_N\n");
    for r in rows {
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.omega, r.block_size, cell(r.a_p), cell(r.a_n)));
    }
    out
}
