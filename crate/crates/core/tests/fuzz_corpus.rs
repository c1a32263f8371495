//! Replays the checked-in fuzz corpus through every parser so regressions
//! surface under a plain `cargo test`.

use std::path::PathBuf;

use wfre::config::RunConfig;
use wfre::kg::{parse_queries, parse_triples, queries_to_jsonl};
use wfre::model::Checkpoint;
use wfre::query::{parse_query, serialize_query};

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| entry.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect()
}

#[test]
fn query_corpus() {
    let mut parsed = 0;
    for (path, bytes) in corpus("parse_query") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        if let Ok(tree) = parse_query(text) {
            assert_eq!(parse_query(&serialize_query(&tree)).unwrap(), tree, "{}", path.display());
            parsed += 1;
        }
    }
    assert!(parsed > 0);
}

#[test]
fn triples_corpus() {
    for (path, bytes) in corpus("parse_triples") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        if let Ok(kg) = parse_triples(text) {
            assert_eq!(parse_triples(&kg.to_tsv()).unwrap(), kg, "{}", path.display());
        }
    }
}

#[test]
fn queries_corpus() {
    for (path, bytes) in corpus("parse_queries") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        if let Ok(samples) = parse_queries(text) {
            assert_eq!(parse_queries(&queries_to_jsonl(&samples)).unwrap(), samples, "{}", path.display());
        }
    }
}

#[test]
fn checkpoint_corpus() {
    let mut decoded = 0;
    for (path, bytes) in corpus("checkpoint_decode") {
        if let Ok(ckpt) = Checkpoint::decode(&bytes) {
            assert!(ckpt.params.is_finite());
            assert_eq!(Checkpoint::decode(&ckpt.encode()).unwrap(), ckpt, "{}", path.display());
            decoded += 1;
        }
    }
    assert!(decoded > 0);
}

#[test]
fn config_corpus() {
    for (_, bytes) in corpus("run_config") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        if let Ok(cfg) = RunConfig::from_toml_str(text) {
            let _ = cfg.validate();
        }
    }
}
