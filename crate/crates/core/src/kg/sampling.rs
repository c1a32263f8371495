use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::kg::KnowledgeGraph;
use crate::query::symbolic::{answer_mask, mask_to_set};
use crate::query::{OperatorTree, QueryType};

/// A query with its answers split by the graph they first appear in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySample {
    #[serde(rename = "query")]
    pub tree: OperatorTree,
    #[serde(default)]
    pub easy: BTreeSet<usize>,
    #[serde(default)]
    pub hard: BTreeSet<usize>,
}

impl QuerySample {
    pub fn query_type(&self) -> Option<QueryType> {
        QueryType::classify(&self.tree)
    }

    /// Easy answers followed by hard answers.
    pub fn all_answers(&self) -> impl Iterator<Item = usize> + '_ {
        self.easy.iter().chain(&self.hard).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOptions {
    /// Keep only samples with at least one hard answer.
    pub require_hard: bool,
    /// Skip queries whose full answer set is larger than this.
    pub max_answers: Option<usize>,
    /// Attempts allowed per requested sample.
    pub attempts_per_sample: usize,
}

impl SamplingOptions {
    /// Hard answers are required whenever the evaluation graph is larger.
    pub fn for_graphs(train_kg: &KnowledgeGraph, eval_kg: &KnowledgeGraph) -> Self {
        Self {
            require_hard: eval_kg.triple_count() > train_kg.triple_count(),
            max_answers: None,
            attempts_per_sample: 100,
        }
    }
}

pub fn sample_queries(
    train_kg: &KnowledgeGraph,
    eval_kg: &KnowledgeGraph,
    template: QueryType,
    count: usize,
    seed: u64,
) -> Result<Vec<QuerySample>> {
    let options = SamplingOptions::for_graphs(train_kg, eval_kg);
    sample_queries_with(train_kg, eval_kg, template, count, seed, &options)
}

/// Backward sampling: pick a target answer on `eval_kg`, then grow the
/// template from the target toward its anchors along incoming edges.
///
/// Duplicate queries are skipped. If the attempt budget runs out, the samples
/// found so far are returned; finding none is an error.
pub fn sample_queries_with(
    train_kg: &KnowledgeGraph,
    eval_kg: &KnowledgeGraph,
    template: QueryType,
    count: usize,
    seed: u64,
    options: &SamplingOptions,
) -> Result<Vec<QuerySample>> {
    if train_kg.entity_count() != eval_kg.entity_count()
        || train_kg.relation_count() != eval_kg.relation_count()
    {
        return Err(WfreError::Shape("train and eval graphs must share their id spaces".into()));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if eval_kg.triple_count() == 0 {
        return Err(WfreError::SamplingExhausted(format!(
            "{template}: evaluation graph has no triples"
        )));
    }
    let shape = template.template();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(options.attempts_per_sample.max(1)).saturating_add(1000);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let target = eval_kg.triples()[rng.gen_range(0..eval_kg.triple_count())].tail;
        let Some(tree) = grow(&shape, target, eval_kg, &mut rng) else {
            continue;
        };
        if seen.contains(&tree) {
            continue;
        }
        let eval_mask = answer_mask(&tree, eval_kg);
        if !eval_mask[target] {
            continue;
        }
        let size = eval_mask.iter().filter(|&&m| m).count();
        if options.max_answers.is_some_and(|cap| size > cap) {
            continue;
        }
        let train_mask = answer_mask(&tree, train_kg);
        let easy = mask_to_set(&train_mask);
        let hard: BTreeSet<usize> = eval_mask
            .iter()
            .zip(&train_mask)
            .enumerate()
            .filter_map(|(e, (&v, &t))| (v && !t).then_some(e))
            .collect();
        if options.require_hard && hard.is_empty() {
            continue;
        }
        seen.insert(tree.clone());
        out.push(QuerySample { tree, easy, hard });
    }
    if out.is_empty() {
        return Err(WfreError::SamplingExhausted(format!(
            "{template}: no valid sample after {budget} attempts"
        )));
    }
    Ok(out)
}

fn grow(shape: &OperatorTree, target: usize, kg: &KnowledgeGraph, rng: &mut ChaCha8Rng) -> Option<OperatorTree> {
    match shape {
        OperatorTree::Anchor(_) => Some(OperatorTree::Anchor(target)),
        OperatorTree::Projection(_, c) => {
            let edge = kg.incoming(target).choose(rng)?;
            Some(OperatorTree::project(edge.relation, grow(c, edge.head, kg, rng)?))
        }
        OperatorTree::Negation(c) => {
            // The negated branch is aimed elsewhere; the caller checks that
            // the target survives the complement.
            let n = kg.entity_count();
            if n < 2 {
                return None;
            }
            let mut other = rng.gen_range(0..n - 1);
            if other >= target {
                other += 1;
            }
            Some(OperatorTree::negate(grow(c, other, kg, rng)?))
        }
        OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
            let mut children = Vec::with_capacity(cs.len());
            for c in cs {
                let child = grow(c, target, kg, rng)?;
                if children.contains(&child) {
                    return None;
                }
                children.push(child);
            }
            Some(if matches!(shape, OperatorTree::Intersection(_)) {
                OperatorTree::Intersection(children)
            } else {
                OperatorTree::Union(children)
            })
        }
    }
}

/// Parses JSON lines of the form `{"query": "...", "easy": [..], "hard": [..]}`.
pub fn parse_queries(text: &str) -> Result<Vec<QuerySample>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: QuerySample = serde_json::from_str(line).map_err(|e| WfreError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Some(e) = sample.easy.intersection(&sample.hard).next() {
            return Err(WfreError::Parse {
                line: idx + 1,
                message: format!("entity {e} is listed as both easy and hard"),
            });
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn queries_to_jsonl(samples: &[QuerySample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("query samples serialize"));
        out.push('\n');
    }
    out
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QuerySample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| WfreError::io(path, e))?;
    parse_queries(&text)
}

pub fn save_queries(path: impl AsRef<Path>, samples: &[QuerySample]) -> Result<()> {
    crate::fsutil::write_atomic(path.as_ref(), queries_to_jsonl(samples).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{generate_synthetic_kg, split_nested};
    use crate::query::{parse_query, symbolic_answers};

    #[test]
    fn parses_records() {
        let s = parse_queries("{\"query\": \"(p 0 (e 1))\", \"easy\": [2], \"hard\": [3]}\n").unwrap();
        assert_eq!(s[0].tree, parse_query("(p 0 (e 1))").unwrap());
        assert_eq!(s[0].easy, BTreeSet::from([2]));
        assert_eq!(s[0].hard, BTreeSet::from([3]));
        let train = parse_queries("{\"query\": \"(e 1)\", \"easy\": [1]}").unwrap();
        assert!(train[0].hard.is_empty());
    }

    #[test]
    fn rejects_bad_records() {
        for (text, line) in [
            ("\n{\"query\": \"(p 0\", \"easy\": []}", 2),
            ("{\"query\": \"(e 1)\", \"easy\": [-1]}", 1),
            ("not json", 1),
            ("{\"query\": \"(e 1)\", \"easy\": [1], \"hard\": [1]}", 1),
        ] {
            match parse_queries(text) {
                Err(WfreError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    fn graphs() -> (KnowledgeGraph, KnowledgeGraph) {
        let kg = generate_synthetic_kg(60, 3, 3.0, 2).unwrap();
        let split = split_nested(&kg, 0.1, 0.1, 3).unwrap();
        (split.train, split.test)
    }

    #[test]
    fn samples_every_template() {
        let (train, test) = graphs();
        for t in QueryType::ALL {
            let samples = sample_queries(&train, &test, t, 10, 9).unwrap();
            assert!(!samples.is_empty(), "{t}");
            for s in &samples {
                assert_eq!(s.query_type(), Some(t));
                assert!(!s.hard.is_empty());
                assert!(s.easy.is_disjoint(&s.hard));
                assert_eq!(s.easy, symbolic_answers(&s.tree, &train).unwrap());
                let mut all: BTreeSet<usize> = s.easy.clone();
                all.extend(&s.hard);
                assert_eq!(all, symbolic_answers(&s.tree, &test).unwrap());
            }
            assert_eq!(samples, sample_queries(&train, &test, t, 10, 9).unwrap());
        }
    }

    #[test]
    fn training_samples_need_no_hard_answers() {
        let (train, _) = graphs();
        let samples = sample_queries(&train, &train, QueryType::P1, 20, 1).unwrap();
        assert_eq!(samples.len(), 20);
        assert!(samples.iter().all(|s| s.hard.is_empty() && !s.easy.is_empty()));
        let p1 = &samples[0].tree;
        let OperatorTree::Projection(r, c) = p1 else { panic!() };
        let OperatorTree::Anchor(h) = **c else { panic!() };
        assert!(train.tails(h, *r).count() > 0);
    }

    #[test]
    fn exhausted_sampling_errors() {
        let empty = KnowledgeGraph::empty(5, 1).unwrap();
        assert!(matches!(
            sample_queries(&empty, &empty, QueryType::P1, 3, 0),
            Err(WfreError::SamplingExhausted(_))
        ));
        let one = KnowledgeGraph::new(5, 1, vec![crate::kg::Triple::new(0, 0, 1)]).unwrap();
        assert!(matches!(
            sample_queries(&one, &one, QueryType::I2, 3, 0),
            Err(WfreError::SamplingExhausted(_))
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let (train, test) = graphs();
        let mut samples = Vec::new();
        for t in QueryType::ALL {
            samples.extend(sample_queries(&train, &test, t, 5, 4).unwrap());
        }
        assert_eq!(parse_queries(&queries_to_jsonl(&samples)).unwrap(), samples);
    }
}
