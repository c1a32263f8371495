//! Knowledge-graph storage, splitting, synthetic generation and query
//! sampling.

mod graph;
mod sampling;

pub use graph::{load_triples, parse_triples, save_triples, KnowledgeGraph, Triple, MAX_ID};
pub use sampling::{
    load_queries, parse_queries, queries_to_jsonl, sample_queries, sample_queries_with,
    save_queries, QuerySample, SamplingOptions,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, WfreError};

/// The nested train ⊆ valid ⊆ test graphs.
#[derive(Debug, Clone)]
pub struct NestedSplit {
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

/// Holds out `test_fraction` of the triples from `valid` and a further
/// `valid_fraction` from `train`; `test` is the full graph.
pub fn split_nested(
    kg: &KnowledgeGraph,
    valid_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<NestedSplit> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(valid_fraction) || !in_unit(test_fraction) || valid_fraction + test_fraction >= 1.0 {
        return Err(WfreError::Validation(format!(
            "split fractions must lie in (0, 1) and sum below 1, got {valid_fraction} and {test_fraction}"
        )));
    }
    let n = kg.triple_count();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    if n_test + n_valid >= n {
        return Err(WfreError::Validation(format!(
            "splitting {n} triples leaves the training graph empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let triples = kg.triples();
    let pick = |idx: &[usize]| idx.iter().map(|&i| triples[i]).collect::<Vec<_>>();
    let e = kg.entity_count();
    let r = kg.relation_count();
    Ok(NestedSplit {
        train: KnowledgeGraph::new(e, r, pick(&order[n_test + n_valid..]))?,
        valid: KnowledgeGraph::new(e, r, pick(&order[n_test..]))?,
        test: kg.clone(),
    })
}

/// A graph with planted structure: entities sit on a ring and each relation
/// maps a head to tails in a narrow window at a relation-specific offset.
///
/// Every (head, relation) pair draws about `avg_degree` tails, so the graph
/// holds about `n_entities * n_relations * avg_degree` triples.
pub fn generate_synthetic_kg(
    n_entities: usize,
    n_relations: usize,
    avg_degree: f64,
    seed: u64,
) -> Result<KnowledgeGraph> {
    if n_entities < 2 {
        return Err(WfreError::Validation(format!(
            "synthetic graph needs at least 2 entities, got {n_entities}"
        )));
    }
    if n_relations == 0 {
        return Err(WfreError::Validation("synthetic graph needs at least 1 relation".into()));
    }
    if !(avg_degree.is_finite() && avg_degree > 0.0) {
        return Err(WfreError::Validation(format!(
            "average degree must be positive, got {avg_degree}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut position: Vec<usize> = (0..n_entities).collect();
    position.shuffle(&mut rng);
    let mut at = vec![0; n_entities];
    for (e, &p) in position.iter().enumerate() {
        at[p] = e;
    }
    let max_half = (n_entities - 1) / 2;
    let half = ((0.6 * avg_degree).round() as usize).clamp(1, max_half.max(1));
    let width = 2 * half + 1;
    let shifts: Vec<usize> = (0..n_relations).map(|_| rng.gen_range(0..n_entities)).collect();
    let mut triples = Vec::new();
    for h in 0..n_entities {
        for (r, &shift) in shifts.iter().enumerate() {
            let centre = position[h] + shift + n_entities;
            let candidates: Vec<usize> = (0..width)
                .map(|k| at[(centre + k - half) % n_entities])
                .filter(|&t| t != h)
                .collect();
            let p = (avg_degree / candidates.len().max(1) as f64).min(1.0);
            for t in candidates {
                if rng.gen::<f64>() < p {
                    triples.push(Triple::new(h, r, t));
                }
            }
        }
    }
    KnowledgeGraph::new(n_entities, n_relations, triples)
}
