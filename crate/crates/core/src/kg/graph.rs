use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};

/// Largest entity or relation id accepted from files.
pub const MAX_ID: usize = u32::MAX as usize - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

/// An immutable multi-relational graph.
///
/// Triples are kept sorted by `(head, relation, tail)` and a second copy by
/// `(tail, relation, head)`, which doubles as the forward and reverse
/// adjacency index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    forward: Vec<Triple>,
    reverse: Vec<Triple>,
}

impl KnowledgeGraph {
    pub fn new(entity_count: usize, relation_count: usize, mut triples: Vec<Triple>) -> Result<Self> {
        if entity_count > MAX_ID + 1 || relation_count > MAX_ID + 1 {
            return Err(WfreError::Validation(format!(
                "graph of {entity_count} entities and {relation_count} relations exceeds the id range"
            )));
        }
        if let Some(t) = triples
            .iter()
            .find(|t| t.head >= entity_count || t.tail >= entity_count || t.relation >= relation_count)
        {
            return Err(WfreError::Validation(format!(
                "triple ({}, {}, {}) out of range for {entity_count} entities and {relation_count} relations",
                t.head, t.relation, t.tail
            )));
        }
        triples.sort_unstable();
        triples.dedup();
        let mut reverse = triples.clone();
        reverse.sort_unstable_by_key(|t| (t.tail, t.relation, t.head));
        Ok(Self {
            entity_count,
            relation_count,
            forward: triples,
            reverse,
        })
    }

    pub fn empty(entity_count: usize, relation_count: usize) -> Result<Self> {
        Self::new(entity_count, relation_count, Vec::new())
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn triple_count(&self) -> usize {
        self.forward.len()
    }

    /// Triples in `(head, relation, tail)` order.
    pub fn triples(&self) -> &[Triple] {
        &self.forward
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.forward.binary_search(t).is_ok()
    }

    fn forward_range(&self, head: usize, relation: usize) -> &[Triple] {
        let lo = self.forward.partition_point(|t| (t.head, t.relation) < (head, relation));
        let hi = self.forward.partition_point(|t| (t.head, t.relation) <= (head, relation));
        &self.forward[lo..hi]
    }

    fn reverse_range(&self, tail: usize, relation: usize) -> &[Triple] {
        let lo = self.reverse.partition_point(|t| (t.tail, t.relation) < (tail, relation));
        let hi = self.reverse.partition_point(|t| (t.tail, t.relation) <= (tail, relation));
        &self.reverse[lo..hi]
    }

    pub fn tails(&self, head: usize, relation: usize) -> impl Iterator<Item = usize> + '_ {
        self.forward_range(head, relation).iter().map(|t| t.tail)
    }

    pub fn heads(&self, tail: usize, relation: usize) -> impl Iterator<Item = usize> + '_ {
        self.reverse_range(tail, relation).iter().map(|t| t.head)
    }

    /// All triples ending in `tail`, ordered by relation then head.
    pub fn incoming(&self, tail: usize) -> &[Triple] {
        let lo = self.reverse.partition_point(|t| t.tail < tail);
        let hi = self.reverse.partition_point(|t| t.tail <= tail);
        &self.reverse[lo..hi]
    }

    pub fn outgoing(&self, head: usize) -> &[Triple] {
        let lo = self.forward.partition_point(|t| t.head < head);
        let hi = self.forward.partition_point(|t| t.head <= head);
        &self.forward[lo..hi]
    }

    pub fn is_subgraph_of(&self, other: &KnowledgeGraph) -> bool {
        self.forward.iter().all(|t| other.contains(t))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# entities={} relations={}\n",
            self.entity_count, self.relation_count
        );
        for t in &self.forward {
            let _ = writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail);
        }
        out
    }
}

fn parse_header(body: &str) -> Option<(usize, usize)> {
    let mut entities = None;
    let mut relations = None;
    for field in body.split_whitespace() {
        let (key, value) = field.split_once('=')?;
        let value: usize = value.parse().ok()?;
        match key {
            "entities" => entities = Some(value),
            "relations" => relations = Some(value),
            _ => return None,
        }
    }
    Some((entities?, relations?))
}

fn parse_id(token: &str, line: usize) -> Result<usize> {
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(WfreError::Parse {
            line,
            message: format!("`{token}` is not a non-negative integer id"),
        });
    }
    match token.parse::<usize>() {
        Ok(v) if v <= MAX_ID => Ok(v),
        _ => Err(WfreError::Validation(format!(
            "id {token} on line {line} exceeds the supported range"
        ))),
    }
}

/// Parses tab-separated `head relation tail` lines.
///
/// Lines starting with `#` are comments; a comment of the form
/// `# entities=N relations=M` fixes the counts, otherwise they are derived
/// from the largest ids seen.
pub fn parse_triples(text: &str) -> Result<KnowledgeGraph> {
    let mut header = None;
    let mut triples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(body) = line.trim_start().strip_prefix('#') {
            if let Some(counts) = parse_header(body) {
                header = Some(counts);
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(WfreError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let h = parse_id(fields[0].trim(), line_no)?;
        let r = parse_id(fields[1].trim(), line_no)?;
        let t = parse_id(fields[2].trim(), line_no)?;
        triples.push(Triple::new(h, r, t));
    }
    let (entities, relations) = match header {
        Some(counts) => counts,
        None => (
            triples.iter().map(|t| t.head.max(t.tail) + 1).max().unwrap_or(0),
            triples.iter().map(|t| t.relation + 1).max().unwrap_or(0),
        ),
    };
    KnowledgeGraph::new(entities, relations, triples)
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| WfreError::io(path, e))?;
    parse_triples(&text)
}

pub fn save_triples(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<()> {
    crate::fsutil::write_atomic(path.as_ref(), kg.to_tsv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_file() {
        let kg = parse_triples("# entities=3 relations=1\n").unwrap();
        assert_eq!((kg.entity_count(), kg.relation_count(), kg.triple_count()), (3, 1, 0));
    }

    #[test]
    fn duplicates_collapse() {
        let kg = parse_triples("0\t0\t1\n0\t0\t1\n1\t1\t2\n").unwrap();
        assert_eq!(kg.triple_count(), 2);
        assert_eq!((kg.entity_count(), kg.relation_count()), (3, 2));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        assert!(matches!(parse_triples("a b c"), Err(WfreError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_triples("# c\n0\t0\t1\n0\tx\t1\n"),
            Err(WfreError::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_triples("0\t0\n"), Err(WfreError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_triples("0\t0\t99999999999999999999\n"),
            Err(WfreError::Validation(_))
        ));
        assert!(matches!(
            parse_triples("# entities=2 relations=1\n0\t0\t5\n"),
            Err(WfreError::Validation(_))
        ));
    }

    #[test]
    fn adjacency_matches_triples() {
        let kg = parse_triples("0\t0\t1\n0\t0\t2\n0\t1\t2\n3\t0\t2\n").unwrap();
        assert_eq!(kg.tails(0, 0).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(kg.heads(2, 0).collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(kg.incoming(2).len(), 3);
        assert_eq!(kg.outgoing(0).len(), 3);
        assert_eq!(kg.tails(1, 0).count(), 0);
    }

    #[test]
    fn tsv_round_trip() {
        let kg = parse_triples("# entities=6 relations=2\n0\t1\t5\n4\t0\t3\n").unwrap();
        assert_eq!(parse_triples(&kg.to_tsv()).unwrap(), kg);
    }
}
