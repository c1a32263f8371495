//! Query operator trees: text syntax, union rewrites, exact traversal and
//! neural execution.

mod embed;
pub(crate) mod symbolic;
mod tree;

pub use symbolic::symbolic_answers;
pub use tree::{
    apply_de_morgan, parse_query, serialize_query, to_dnf, OperatorTree, QueryType, MAX_DEPTH,
    MAX_DNF_BRANCHES,
};
pub use embed::{
    embed_query, embed_query_composed, record_query, score_entities, ComposedModel, EmbedOptions,
    QueryTape, UnionMode,
};
