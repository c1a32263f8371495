//! On-disk dataset layout: three nested triple files plus one query file per
//! split and query type.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::fsutil::write_atomic;
use crate::kg::{
    generate_synthetic_kg, load_queries, load_triples, queries_to_jsonl, sample_queries,
    split_nested, KnowledgeGraph, QuerySample,
};
use crate::query::QueryType;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub fn triples_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.tsv"))
}

pub fn queries_path(dir: &Path, split: &str, query_type: QueryType) -> PathBuf {
    dir.join(format!("{split}_{}.jsonl", query_type.name()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub entities: usize,
    pub relations: usize,
    pub degree: f64,
    pub seed: u64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub train_queries: usize,
    pub eval_queries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            entities: 50,
            relations: 3,
            degree: 4.0,
            seed: 1,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            train_queries: 500,
            eval_queries: 100,
        }
    }
}

/// The generated graphs and queries, keyed by `(split, type)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
    pub queries: BTreeMap<(String, QueryType), Vec<QuerySample>>,
}

impl Dataset {
    pub fn graph(&self, split: &str) -> Option<&KnowledgeGraph> {
        match split {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn queries(&self, split: &str, query_type: QueryType) -> &[QuerySample] {
        self.queries
            .get(&(split.to_string(), query_type))
            .map_or(&[], Vec::as_slice)
    }

    /// All queries of one split, in type order.
    pub fn split_queries(&self, split: &str) -> Vec<QuerySample> {
        QueryType::ALL
            .iter()
            .flat_map(|&t| self.queries(split, t).iter().cloned())
            .collect()
    }
}

/// Builds a synthetic dataset. Training queries are answered on the training
/// graph; validation and test queries take their easy answers from the
/// preceding graph and their hard answers from their own.
pub fn synthesize(config: &SynthConfig) -> Result<Dataset> {
    if config.train_queries == 0 || config.eval_queries == 0 {
        return Err(WfreError::Validation("query counts must be positive".into()));
    }
    let kg = generate_synthetic_kg(config.entities, config.relations, config.degree, config.seed)?;
    let split = split_nested(&kg, config.valid_fraction, config.test_fraction, config.seed)?;
    let mut queries = BTreeMap::new();
    for (i, &t) in QueryType::ALL.iter().enumerate() {
        let base = config.seed.wrapping_mul(1000).wrapping_add(10 * i as u64);
        let sets = [
            ("train", &split.train, &split.train, config.train_queries),
            ("valid", &split.train, &split.valid, config.eval_queries),
            ("test", &split.valid, &split.test, config.eval_queries),
        ];
        for (j, (name, easy_kg, full_kg, count)) in sets.into_iter().enumerate() {
            let samples = sample_queries(easy_kg, full_kg, t, count, base + j as u64)?;
            queries.insert((name.to_string(), t), samples);
        }
    }
    Ok(Dataset {
        train: split.train,
        valid: split.valid,
        test: split.test,
        queries,
    })
}

/// Writes every file of the dataset atomically and returns the paths, in
/// write order.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for split in SPLITS {
        let path = triples_path(dir, split);
        let kg = dataset.graph(split).expect("known split");
        write_atomic(&path, kg.to_tsv().as_bytes())?;
        written.push(path);
    }
    for ((split, t), samples) in &dataset.queries {
        let path = queries_path(dir, split, *t);
        write_atomic(&path, queries_to_jsonl(samples).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a dataset directory. Missing query files are treated as empty.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let train = load_triples(triples_path(dir, "train"))?;
    let valid = load_triples(triples_path(dir, "valid"))?;
    let test = load_triples(triples_path(dir, "test"))?;
    if !train.is_subgraph_of(&valid) || !valid.is_subgraph_of(&test) {
        return Err(WfreError::Validation(format!(
            "{}: graphs are not nested train within valid within test",
            dir.display()
        )));
    }
    let mut queries = BTreeMap::new();
    for split in SPLITS {
        for &t in &QueryType::ALL {
            let path = queries_path(dir, split, t);
            if path.exists() {
                queries.insert((split.to_string(), t), load_queries(&path)?);
            }
        }
    }
    Ok(Dataset {
        train,
        valid,
        test,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_queries: 20,
            eval_queries: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn writes_three_graphs_and_all_query_files() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthesize(&small()).unwrap();
        let files = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(files.len(), 3 + 14 * 3);
        assert!(files.iter().all(|p| p.exists()));
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.test, ds.test);
        for split in SPLITS {
            for &t in &QueryType::ALL {
                assert_eq!(back.queries(split, t), ds.queries(split, t));
                assert!(!ds.queries(split, t).is_empty(), "{split} {t}");
            }
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = write_dataset(&synthesize(&small()).unwrap(), a.path()).unwrap();
        write_dataset(&synthesize(&small()).unwrap(), b.path()).unwrap();
        for p in fa {
            let name = p.file_name().unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn single_entity_is_rejected() {
        let cfg = SynthConfig {
            entities: 1,
            ..small()
        };
        assert!(matches!(synthesize(&cfg), Err(WfreError::Validation(_))));
    }

    #[test]
    fn eval_queries_have_hard_answers() {
        let ds = synthesize(&small()).unwrap();
        for &t in &QueryType::ALL {
            assert!(ds.queries("test", t).iter().all(|q| !q.hard.is_empty()));
            assert!(ds.queries("train", t).iter().all(|q| q.hard.is_empty()));
        }
    }
}
