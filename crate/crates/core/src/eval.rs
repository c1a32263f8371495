//! Filtered ranking metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::fuzzy::TNormKind;
use crate::kg::QuerySample;
use crate::model::ModelParams;
use crate::query::{embed_query_composed, score_entities, ComposedModel, EmbedOptions, QueryType, UnionMode};
use crate::transport::{Scorer, TransportConfig};

/// Filtered rank of `answer` (lower scores rank first).
///
/// Candidates are every entity outside `exclude`. Ties count half, so `n`
/// equal scores give rank `(n + 1) / 2`.
pub fn rank_answer(scores: &[f64], answer: usize, exclude: &BTreeSet<usize>) -> Result<f64> {
    if answer >= scores.len() {
        return Err(WfreError::Contract(format!(
            "answer {answer} outside the {} scored entities",
            scores.len()
        )));
    }
    if exclude.contains(&answer) {
        return Err(WfreError::Contract(format!("answer {answer} is in its own exclusion set")));
    }
    let target = scores[answer];
    if !target.is_finite() {
        return Err(WfreError::Contract(format!("answer {answer} has a non-finite score")));
    }
    let mut better = 0usize;
    let mut ties = 0usize;
    for (c, &s) in scores.iter().enumerate() {
        if c == answer || exclude.contains(&c) {
            continue;
        }
        if s < target {
            better += 1;
        } else if s == target {
            ties += 1;
        }
    }
    Ok(1.0 + better as f64 + 0.5 * ties as f64)
}

/// Whether a rank counts as a hit at `k`, rounding half ranks up.
pub fn hit_at(rank: f64, k: usize) -> bool {
    (rank + 0.5).floor() <= k as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    fn add(&mut self, o: &Metrics) {
        self.mrr += o.mrr;
        self.hits1 += o.hits1;
        self.hits3 += o.hits3;
        self.hits10 += o.hits10;
    }

    fn scaled(&self, s: f64) -> Metrics {
        Metrics {
            mrr: self.mrr * s,
            hits1: self.hits1 * s,
            hits3: self.hits3 * s,
            hits10: self.hits10 * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub query_type: String,
    pub has_negation: bool,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub queries: usize,
    pub answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub types: Vec<TypeReport>,
    /// Mean MRR over query types without negation.
    pub a_p: Option<f64>,
    /// Mean MRR over query types with negation.
    pub a_n: Option<f64>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<&TypeReport> {
        self.types.iter().find(|t| t.query_type == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("type\tmrr\thits1\thits3\thits10\tn\n");
        for t in &self.types {
            let m = &t.metrics;
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                t.query_type, m.mrr, m.hits1, m.hits3, m.hits10, t.queries
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Metrics of one query, averaged over its hard answers.
pub fn query_metrics(scores: &[f64], sample: &QuerySample) -> Result<Metrics> {
    if sample.hard.is_empty() {
        return Err(WfreError::Validation(format!(
            "query {} has no hard answers to rank",
            sample.tree
        )));
    }
    let mut exclude: BTreeSet<usize> = sample.all_answers().collect();
    let mut total = Metrics::default();
    for &a in &sample.hard {
        exclude.remove(&a);
        let rank = rank_answer(scores, a, &exclude)?;
        exclude.insert(a);
        total.add(&Metrics {
            mrr: 1.0 / rank,
            hits1: hit_at(rank, 1) as u8 as f64,
            hits3: hit_at(rank, 3) as u8 as f64,
            hits10: hit_at(rank, 10) as u8 as f64,
        });
    }
    Ok(total.scaled(1.0 / sample.hard.len() as f64))
}

fn type_key(sample: &QuerySample) -> String {
    match sample.query_type() {
        Some(t) => t.name().to_string(),
        None => sample.tree.signature(),
    }
}

/// Evaluates with an arbitrary scorer returning one score per entity.
pub fn evaluate_with<F>(samples: &[QuerySample], score: F) -> Result<EvalReport>
where
    F: Fn(&QuerySample) -> Result<Vec<f64>> + Sync,
{
    if samples.is_empty() {
        return Err(WfreError::Validation("no samples to evaluate".into()));
    }
    let per_query = samples
        .par_iter()
        .map(|s| query_metrics(&score(s)?, s))
        .collect::<Result<Vec<Metrics>>>()?;
    let mut groups: BTreeMap<String, (Metrics, usize, usize, bool)> = BTreeMap::new();
    for (s, m) in samples.iter().zip(&per_query) {
        let g = groups
            .entry(type_key(s))
            .or_insert((Metrics::default(), 0, 0, s.tree.contains_negation()));
        g.0.add(m);
        g.1 += 1;
        g.2 += s.hard.len();
    }
    let order = |name: &str| {
        name.parse::<QueryType>()
            .map(|t| t as usize)
            .unwrap_or(QueryType::ALL.len())
    };
    let mut types: Vec<TypeReport> = groups
        .into_iter()
        .map(|(name, (sum, queries, answers, has_negation))| TypeReport {
            metrics: sum.scaled(1.0 / queries as f64),
            query_type: name,
            has_negation,
            queries,
            answers,
        })
        .collect();
    types.sort_by(|a, b| {
        order(&a.query_type)
            .cmp(&order(&b.query_type))
            .then_with(|| a.query_type.cmp(&b.query_type))
    });
    let mean = |neg: bool| {
        let v: Vec<f64> = types
            .iter()
            .filter(|t| t.has_negation == neg)
            .map(|t| t.metrics.mrr)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (a_p, a_n) = (mean(false), mean(true));
    Ok(EvalReport { types, a_p, a_n })
}

/// Scores each sample with the model and ranks its hard answers.
pub fn evaluate(
    model: &ModelParams,
    samples: &[QuerySample],
    transport: &TransportConfig,
    mode: UnionMode,
    tnorm: TNormKind,
) -> Result<EvalReport> {
    let scorer = Scorer::new(transport.clone())?;
    transport.check_dim(model.dim)?;
    let composed = ComposedModel::new(model);
    let entities = model.entity_histograms();
    let opts = EmbedOptions::eval(mode, tnorm);
    evaluate_with(samples, |s| {
        let branches = embed_query_composed(&s.tree, &composed, &opts)?;
        score_entities(&branches, &entities, &scorer)
    })
}

/// Scores that put every known answer first: 0 for answers, 1 otherwise.
pub fn oracle_scores(sample: &QuerySample, entity_count: usize) -> Vec<f64> {
    let mut s = vec![1.0; entity_count];
    for a in sample.all_answers() {
        if a < entity_count {
            s[a] = 0.0;
        }
    }
    s
}
