use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::fuzzy::{dropout_mask, TNormKind};
use crate::measures::{clamp_mass, clamp_mass_grad, BoundedHistogram, DEFAULT_MASS_FLOOR};
use crate::model::{ModelParams, SparseGrads};
use crate::projection::{
    backward_composed, forward_composed, ComposedRelation, InputDropout, ProjectionCache,
};
use crate::query::{apply_de_morgan, to_dnf, OperatorTree};
use crate::transport::Scorer;

/// How unions are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnionMode {
    /// One embedding per conjunctive branch, scores merged by minimum.
    #[default]
    Dnf,
    /// Unions rewritten with De Morgan's law into a single embedding.
    Dm,
}

impl std::str::FromStr for UnionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dnf" => Ok(UnionMode::Dnf),
            "dm" | "demorgan" => Ok(UnionMode::Dm),
            other => Err(format!("unknown union mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedOptions {
    pub mode: UnionMode,
    pub tnorm: TNormKind,
    pub training: bool,
    pub drop_p: f64,
    pub drop_n: f64,
    pub seed: u64,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            mode: UnionMode::Dnf,
            tnorm: TNormKind::Product,
            training: false,
            drop_p: 0.05,
            drop_n: 0.1,
            seed: 0,
        }
    }
}

impl EmbedOptions {
    pub fn eval(mode: UnionMode, tnorm: TNormKind) -> Self {
        Self {
            mode,
            tnorm,
            ..Self::default()
        }
    }
}

/// A model with relation weights composed lazily and at most once.
pub struct ComposedModel<'a> {
    pub model: &'a ModelParams,
    relations: Vec<OnceLock<ComposedRelation>>,
}

impl<'a> ComposedModel<'a> {
    pub fn new(model: &'a ModelParams) -> Self {
        Self {
            model,
            relations: (0..model.relation_count).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn relation(&self, r: usize) -> &ComposedRelation {
        self.relations[r].get_or_init(|| {
            self.model
                .projection
                .compose(r)
                .expect("relation id checked before composing")
        })
    }
}

fn mix_seed(seed: u64, node: usize) -> u64 {
    let mut z = seed ^ (node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
enum Op {
    Anchor(usize),
    Project(usize, Option<ProjectionCache>),
    Meet(usize, usize),
    Join(usize, usize),
    Complement(usize, Option<Vec<bool>>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Recorded bottom-up execution of a query, replayable in reverse.
#[derive(Debug, Clone)]
pub struct QueryTape {
    nodes: Vec<Node>,
    roots: Vec<usize>,
    tnorm: TNormKind,
}

impl QueryTape {
    pub fn branch_count(&self) -> usize {
        self.roots.len()
    }

    pub fn branch_values(&self, b: usize) -> &[f64] {
        &self.nodes[self.roots[b]].value
    }

    pub fn embeddings(&self) -> Vec<BoundedHistogram> {
        self.roots
            .iter()
            .map(|&r| BoundedHistogram::from_clamped(self.nodes[r].value.clone(), DEFAULT_MASS_FLOOR))
            .collect()
    }

    /// Accumulates parameter gradients given upstream gradients per branch.
    pub fn backward(&self, branch_grads: &[(usize, Vec<f64>)], composed: &ComposedModel<'_>, grads: &mut SparseGrads) {
        let model = composed.model;
        let d = model.dim;
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let add = |slot: &mut Option<Vec<f64>>, v: &[f64]| match slot {
            Some(acc) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
            None => *slot = Some(v.to_vec()),
        };
        for (b, grad) in branch_grads {
            add(&mut g[self.roots[*b]], grad);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(gv) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Anchor(e) => grads.add_entity_value_grad(model, *e, &gv, 1.0),
                Op::Project(child, cache) => {
                    let cache = cache.as_ref().expect("tape recorded without projection caches");
                    let acc = grads.relation_acc(cache.relation, model);
                    let gin = backward_composed(&gv, cache, composed.relation(cache.relation), acc);
                    add(&mut g[*child], &gin);
                }
                Op::Meet(a, b) | Op::Join(a, b) => {
                    let (xa, xb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let meet = matches!(node.op, Op::Meet(..));
                    let mut ga = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    for i in 0..d {
                        let (raw, (da, db)) = if meet {
                            (self.tnorm.tnorm(xa[i], xb[i]), self.tnorm.tnorm_grad(xa[i], xb[i]))
                        } else {
                            (self.tnorm.conorm(xa[i], xb[i]), self.tnorm.conorm_grad(xa[i], xb[i]))
                        };
                        let gi = gv[i] * clamp_mass_grad(raw, DEFAULT_MASS_FLOOR);
                        ga[i] = gi * da;
                        gb[i] = gi * db;
                    }
                    add(&mut g[*a], &ga);
                    add(&mut g[*b], &gb);
                }
                Op::Complement(child, mask) => {
                    let x = &self.nodes[*child].value;
                    let gc: Vec<f64> = (0..d)
                        .map(|i| {
                            if mask.as_ref().is_some_and(|m| m[i]) {
                                0.0
                            } else {
                                -gv[i] * clamp_mass_grad(1.0 - x[i], DEFAULT_MASS_FLOOR)
                            }
                        })
                        .collect();
                    add(&mut g[*child], &gc);
                }
            }
        }
    }
}

struct Recorder<'a, 'm> {
    composed: &'a ComposedModel<'m>,
    opts: EmbedOptions,
    nodes: Vec<Node>,
    keep_cache: bool,
}

impl Recorder<'_, '_> {
    fn push(&mut self, op: Op, value: Vec<f64>) -> usize {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn binary(&mut self, a: usize, b: usize, meet: bool) -> usize {
        let k = self.opts.tnorm;
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| clamp_mass(if meet { k.tnorm(x, y) } else { k.conorm(x, y) }, DEFAULT_MASS_FLOOR))
            .collect();
        self.push(if meet { Op::Meet(a, b) } else { Op::Join(a, b) }, value)
    }

    fn record(&mut self, tree: &OperatorTree) -> usize {
        match tree {
            OperatorTree::Anchor(e) => {
                let v = self.composed.model.entity_values(*e);
                self.push(Op::Anchor(*e), v)
            }
            OperatorTree::Projection(r, c) => {
                let child = self.record(c);
                let tag = self.nodes.len();
                let dropout = (self.opts.training && self.opts.drop_p > 0.0).then(|| InputDropout {
                    p: self.opts.drop_p,
                    seed: mix_seed(self.opts.seed, tag),
                });
                let (value, cache) = forward_composed(
                    &self.nodes[child].value,
                    self.composed.relation(*r),
                    dropout,
                    DEFAULT_MASS_FLOOR,
                    self.keep_cache,
                );
                self.push(Op::Project(child, cache), value)
            }
            OperatorTree::Intersection(cs) | OperatorTree::Union(cs) => {
                let meet = matches!(tree, OperatorTree::Intersection(_));
                let mut acc = self.record(&cs[0]);
                for c in &cs[1..] {
                    let next = self.record(c);
                    acc = self.binary(acc, next, meet);
                }
                acc
            }
            OperatorTree::Negation(c) => {
                let child = self.record(c);
                let tag = self.nodes.len();
                let mask = (self.opts.training && self.opts.drop_n > 0.0).then(|| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.opts.seed, tag));
                    dropout_mask(self.composed.model.dim, self.opts.drop_n, &mut rng)
                });
                let x = &self.nodes[child].value;
                let value = (0..x.len())
                    .map(|i| {
                        if mask.as_ref().is_some_and(|m| m[i]) {
                            0.5
                        } else {
                            clamp_mass(1.0 - x[i], DEFAULT_MASS_FLOOR)
                        }
                    })
                    .collect();
                self.push(Op::Complement(child, mask), value)
            }
        }
    }
}

fn validate(tree: &OperatorTree, model: &ModelParams, opts: &EmbedOptions) -> Result<()> {
    tree.check_ids(model.entity_count, model.relation_count)?;
    for p in [opts.drop_p, opts.drop_n] {
        if !(0.0..1.0).contains(&p) {
            return Err(WfreError::Validation(format!("dropout rate must lie in [0, 1), got {p}")));
        }
    }
    Ok(())
}

fn branches(tree: &OperatorTree, mode: UnionMode) -> Result<Vec<OperatorTree>> {
    match mode {
        UnionMode::Dnf => to_dnf(tree),
        UnionMode::Dm => Ok(vec![apply_de_morgan(tree)]),
    }
}

/// Executes a query and records everything its backward pass needs.
pub fn record_query(tree: &OperatorTree, composed: &ComposedModel<'_>, opts: &EmbedOptions) -> Result<QueryTape> {
    validate(tree, composed.model, opts)?;
    let mut rec = Recorder {
        composed,
        opts: *opts,
        nodes: Vec::new(),
        keep_cache: true,
    };
    let roots = branches(tree, opts.mode)?
        .iter()
        .map(|b| rec.record(b))
        .collect();
    Ok(QueryTape {
        nodes: rec.nodes,
        roots,
        tnorm: opts.tnorm,
    })
}

/// Embeds a query: one histogram per conjunctive branch in DNF mode, a
/// single histogram in De Morgan mode.
pub fn embed_query(tree: &OperatorTree, model: &ModelParams, opts: &EmbedOptions) -> Result<Vec<BoundedHistogram>> {
    embed_query_composed(tree, &ComposedModel::new(model), opts)
}

pub fn embed_query_composed(
    tree: &OperatorTree,
    composed: &ComposedModel<'_>,
    opts: &EmbedOptions,
) -> Result<Vec<BoundedHistogram>> {
    validate(tree, composed.model, opts)?;
    let mut rec = Recorder {
        composed,
        opts: *opts,
        nodes: Vec::new(),
        keep_cache: false,
    };
    let roots: Vec<usize> = branches(tree, opts.mode)?
        .iter()
        .map(|b| rec.record(b))
        .collect();
    Ok(roots
        .into_iter()
        .map(|r| BoundedHistogram::from_clamped(std::mem::take(&mut rec.nodes[r].value), DEFAULT_MASS_FLOOR))
        .collect())
}

/// Distance from every entity to the query, minimized over branches.
/// Lower scores rank first.
pub fn score_entities(
    branch_embs: &[BoundedHistogram],
    entities: &[BoundedHistogram],
    scorer: &Scorer,
) -> Result<Vec<f64>> {
    if branch_embs.is_empty() {
        return Err(WfreError::Validation("scoring needs at least one branch".into()));
    }
    let d = scorer.config().dim();
    if let Some(h) = branch_embs.iter().chain(entities).find(|h| h.dim() != d) {
        return Err(WfreError::Dimension(format!(
            "histogram has {} bars, transport grid has {d}",
            h.dim()
        )));
    }
    Ok(entities
        .par_iter()
        .map(|e| {
            branch_embs
                .iter()
                .map(|b| scorer.distance_slices(e.values(), b.values()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}
