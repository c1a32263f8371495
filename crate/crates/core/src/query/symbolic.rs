use std::collections::BTreeSet;

use crate::error::Result;
use crate::kg::KnowledgeGraph;
use crate::query::OperatorTree;

/// Exact answer set of a query by graph traversal.
pub fn symbolic_answers(tree: &OperatorTree, kg: &KnowledgeGraph) -> Result<BTreeSet<usize>> {
    tree.check_ids(kg.entity_count(), kg.relation_count())?;
    Ok(mask_to_set(&answer_mask(tree, kg)))
}

pub(crate) fn mask_to_set(mask: &[bool]) -> BTreeSet<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(e, &m)| m.then_some(e))
        .collect()
}

/// Membership vector over all entities. Ids must already be in range.
pub(crate) fn answer_mask(tree: &OperatorTree, kg: &KnowledgeGraph) -> Vec<bool> {
    let n = kg.entity_count();
    match tree {
        OperatorTree::Anchor(e) => {
            let mut m = vec![false; n];
            m[*e] = true;
            m
        }
        OperatorTree::Projection(r, c) => {
            let inner = answer_mask(c, kg);
            let mut m = vec![false; n];
            for (h, _) in inner.iter().enumerate().filter(|(_, &x)| x) {
                for t in kg.tails(h, *r) {
                    m[t] = true;
                }
            }
            m
        }
        OperatorTree::Intersection(cs) => {
            let mut m = vec![true; n];
            for c in cs {
                for (a, b) in m.iter_mut().zip(answer_mask(c, kg)) {
                    *a &= b;
                }
            }
            m
        }
        OperatorTree::Union(cs) => {
            let mut m = vec![false; n];
            for c in cs {
                for (a, b) in m.iter_mut().zip(answer_mask(c, kg)) {
                    *a |= b;
                }
            }
            m
        }
        OperatorTree::Negation(c) => answer_mask(c, kg).into_iter().map(|x| !x).collect(),
    }
}
