//! Negative-sampling objective, AdamW, and the training loop.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::fuzzy::TNormKind;
use crate::kg::QuerySample;
use crate::measures::BoundedHistogram;
use crate::model::{ModelGrads, ModelParams, SparseGrads};
use crate::projection::logistic;
use crate::query::{record_query, ComposedModel, EmbedOptions, UnionMode};
use crate::transport::{GradMode, Scorer, TransportConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub k_neg: usize,
    pub margin: f64,
    pub scale: f64,
    pub drop_p: f64,
    pub drop_n: f64,
    pub tnorm: TNormKind,
    pub union_mode: UnionMode,
    pub transport: TransportConfig,
    pub grad_mode: GradMode,
    pub batch_size: usize,
    pub seed: u64,
    pub log_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 0.01,
            steps: 240_000,
            k_neg: 32,
            margin: 37.5,
            scale: 120.0,
            drop_p: 0.05,
            drop_n: 0.1,
            tnorm: TNormKind::Product,
            union_mode: UnionMode::Dnf,
            transport: TransportConfig::default(),
            grad_mode: GradMode::Unrolled,
            batch_size: 16,
            seed: 0,
            log_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(WfreError::Validation(m));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return fail(format!("scale must be positive, got {}", self.scale));
        }
        if self.k_neg == 0 {
            return fail("at least one negative sample is required".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, p) in [("drop_p", self.drop_p), ("drop_n", self.drop_n)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        self.transport.validate()
    }

    fn embed_options(&self, training: bool, seed: u64) -> EmbedOptions {
        EmbedOptions {
            mode: self.union_mode,
            tnorm: self.tnorm,
            training,
            drop_p: self.drop_p,
            drop_n: self.drop_n,
            seed,
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss from the answer and negative distances, with its partial
/// derivatives `(loss, dL/dD_answer, dL/dD_neg)`.
pub fn loss_from_distances(answer: f64, negatives: &[f64], margin: f64, scale: f64) -> Result<(f64, f64, Vec<f64>)> {
    if negatives.is_empty() {
        return Err(WfreError::Validation("loss needs at least one negative".into()));
    }
    let k = negatives.len() as f64;
    let pos = scale * answer - margin;
    let mut loss = softplus(pos);
    let d_answer = scale * logistic(pos);
    let mut d_neg = Vec::with_capacity(negatives.len());
    for &dn in negatives {
        let z = margin - scale * dn;
        loss += softplus(z) / k;
        d_neg.push(-scale * logistic(z) / k);
    }
    Ok((loss, d_answer, d_neg))
}

/// `-log σ(γ - ρ D(a, q)) - (1/K) Σ log σ(ρ D(n_k, q) - γ)`.
pub fn loss(
    query_emb: &BoundedHistogram,
    answer_emb: &BoundedHistogram,
    negative_embs: &[BoundedHistogram],
    margin: f64,
    scale: f64,
    transport: &TransportConfig,
) -> Result<f64> {
    if negative_embs.is_empty() {
        return Err(WfreError::Validation("loss needs at least one negative".into()));
    }
    let scorer = Scorer::new(transport.clone())?;
    let d_answer = scorer.distance(answer_emb, query_emb)?;
    let d_neg = negative_embs
        .iter()
        .map(|n| scorer.distance(n, query_emb))
        .collect::<Result<Vec<_>>>()?;
    Ok(loss_from_distances(d_answer, &d_neg, margin, scale)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update of a parameter slice. `step` counts from 1.
pub fn adamw_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, hp: &AdamHyper) {
    let t = step.max(1) as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let decay = 1.0 - hp.lr * hp.weight_decay;
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let update = (m[i] / c1) / ((v[i] / c2).sqrt() + hp.eps);
        param[i] = param[i] * decay - hp.lr * update;
    }
}

/// First and second moments for every parameter buffer.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = model.buffers().iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

pub fn adamw_step(params: &mut ModelParams, grads: &ModelGrads, state: &mut AdamState, hp: &AdamHyper) -> Result<()> {
    if grads.shape() != params.shape() || grads.buffers().len() != state.m.len() {
        return Err(WfreError::Shape("gradient layout differs from the parameters".into()));
    }
    state.step += 1;
    let step = state.step;
    let grads = grads.buffers();
    for (((p, g), m), v) in params
        .buffers_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.len() != g.len() {
            return Err(WfreError::Shape("gradient buffer length differs".into()));
        }
        adamw_update(p, g, m, v, step, hp);
    }
    Ok(())
}

/// Draws `k_neg` entities uniformly, with replacement, from the entities
/// outside `answers`.
pub fn negative_sample(
    entity_count: usize,
    answers: &BTreeSet<usize>,
    k_neg: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let excluded = answers.iter().filter(|&&a| a < entity_count).count();
    if excluded >= entity_count {
        return Err(WfreError::Validation(
            "every entity is an answer; no negatives to sample".into(),
        ));
    }
    if 2 * excluded <= entity_count {
        let mut out = Vec::with_capacity(k_neg);
        while out.len() < k_neg {
            let e = rng.gen_range(0..entity_count);
            if !answers.contains(&e) {
                out.push(e);
            }
        }
        return Ok(out);
    }
    let pool: Vec<usize> = (0..entity_count).filter(|e| !answers.contains(e)).collect();
    Ok((0..k_neg).map(|_| pool[rng.gen_range(0..pool.len())]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

pub fn metrics_to_tsv(rows: &[MetricRow]) -> String {
    let mut out = String::from("step\tloss\tvalid_mrr\n");
    for r in rows {
        let mrr = r.valid_mrr.map(|m| format!("{m:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{}\t{:.6}\t{}", r.step, r.loss, mrr);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub log: Vec<MetricRow>,
}

/// Per-interval hooks. `on_log` receives the model after each logging
/// interval and may return a validation MRR to record.
pub trait TrainCallbacks {
    fn on_log(&mut self, _step: usize, _loss: f64, _model: &ModelParams) -> Option<f64> {
        None
    }
}

pub struct NoCallbacks;

impl TrainCallbacks for NoCallbacks {}

/// One training example: a query, its answer, and the negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<'a> {
    pub sample: &'a QuerySample,
    pub answer: usize,
    pub negatives: Vec<usize>,
    pub embed_seed: u64,
}

/// Loss of one example and its sparse gradient.
pub fn example_loss_and_grad(
    example: &Example<'_>,
    composed: &ComposedModel<'_>,
    scorer: &Scorer,
    config: &TrainConfig,
    training: bool,
) -> Result<(f64, SparseGrads)> {
    let model = composed.model;
    let opts = config.embed_options(training, example.embed_seed);
    let tape = record_query(&example.sample.tree, composed, &opts)?;
    let nb = tape.branch_count();
    // Distance of an entity to the query is the minimum over branches.
    let closest = |e: usize| {
        let u = model.entity_values(e);
        (0..nb)
            .map(|b| scorer.value_and_grad_slices(&u, tape.branch_values(b), config.grad_mode))
            .enumerate()
            .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
            .expect("at least one branch")
    };
    let (ab, ag) = closest(example.answer);
    let negs: Vec<_> = example.negatives.iter().map(|&n| closest(n)).collect();
    let neg_d: Vec<f64> = negs.iter().map(|(_, g)| g.value).collect();
    let (value, d_answer, d_neg) = loss_from_distances(ag.value, &neg_d, config.margin, config.scale)?;

    let mut grads = SparseGrads::new();
    let mut branch_grads: Vec<Vec<f64>> = vec![vec![0.0; model.dim]; nb];
    grads.add_entity_value_grad(model, example.answer, &ag.grad_u, d_answer);
    branch_grads[ab].iter_mut().zip(&ag.grad_v).for_each(|(a, g)| *a += d_answer * g);
    for ((&n, (b, g)), &w) in example.negatives.iter().zip(&negs).zip(&d_neg) {
        grads.add_entity_value_grad(model, n, &g.grad_u, w);
        branch_grads[*b].iter_mut().zip(&g.grad_v).for_each(|(a, x)| *a += w * x);
    }
    let bg: Vec<(usize, Vec<f64>)> = branch_grads.into_iter().enumerate().collect();
    tape.backward(&bg, composed, &mut grads);
    Ok((value, grads))
}

fn draw_example<'a>(
    data: &'a [QuerySample],
    entity_count: usize,
    k_neg: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Example<'a>> {
    let sample = &data[rng.gen_range(0..data.len())];
    let answer = *sample
        .easy
        .iter()
        .choose(rng)
        .ok_or_else(|| WfreError::Validation(format!("training query {} has no answers", sample.tree)))?;
    let negatives = negative_sample(entity_count, &sample.easy, k_neg, rng)?;
    Ok(Example {
        sample,
        answer,
        negatives,
        embed_seed: rng.gen(),
    })
}

fn check_data(model: &ModelParams, data: &[QuerySample], config: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(WfreError::Validation("training set is empty".into()));
    }
    config.transport.check_dim(model.dim)?;
    for s in data {
        s.tree.check_ids(model.entity_count, model.relation_count)?;
        if let Some(&e) = s.easy.iter().find(|&&e| e >= model.entity_count) {
            return Err(WfreError::Lookup(format!("answer {e} out of range")));
        }
    }
    Ok(())
}

/// Mean loss over every training query with dropout off, one answer and
/// one negative set per query drawn from `seed`.
pub fn dataset_loss(model: &ModelParams, data: &[QuerySample], config: &TrainConfig, seed: u64) -> Result<f64> {
    config.validate()?;
    check_data(model, data, config)?;
    let scorer = Scorer::new(config.transport.clone())?;
    let composed = ComposedModel::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = data
        .iter()
        .map(|sample| {
            let answer = *sample.easy.iter().choose(&mut rng).ok_or_else(|| {
                WfreError::Validation(format!("training query {} has no answers", sample.tree))
            })?;
            let negatives = negative_sample(model.entity_count, &sample.easy, config.k_neg, &mut rng)?;
            Ok(Example {
                sample,
                answer,
                negatives,
                embed_seed: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let losses = examples
        .par_iter()
        .map(|ex| example_loss_and_grad(ex, &composed, &scorer, config, false).map(|(l, _)| l))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Runs `config.steps` AdamW steps on mini-batches drawn from `data`.
///
/// Per-example gradients are computed in parallel and reduced in batch
/// order, so results do not depend on the worker count.
pub fn train(
    model: ModelParams,
    data: &[QuerySample],
    config: &TrainConfig,
    callbacks: &mut dyn TrainCallbacks,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = model;
    if config.steps == 0 {
        return Ok(TrainOutcome { model, log: Vec::new() });
    }
    check_data(&model, data, config)?;
    let scorer = Scorer::new(config.transport.clone())?;
    let hp = AdamHyper {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.adam_eps,
    };
    let mut state = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dense = model.zeros_like();
    let mut log = Vec::new();
    let mut interval_loss = 0.0;
    let mut interval_steps = 0usize;
    let log_every = config.log_every.max(1);
    for step in 1..=config.steps {
        let examples = (0..config.batch_size)
            .map(|_| draw_example(data, model.entity_count, config.k_neg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let composed = ComposedModel::new(&model);
        let results = examples
            .par_iter()
            .map(|ex| example_loss_and_grad(ex, &composed, &scorer, config, true))
            .collect::<Result<Vec<_>>>()?;
        let mut batch = SparseGrads::new();
        let mut batch_loss = 0.0;
        for (l, g) in results {
            batch_loss += l;
            batch.merge(g);
        }
        let n = config.batch_size as f64;
        for b in dense.buffers_mut() {
            b.fill(0.0);
        }
        batch.accumulate_into(&model, 1.0 / n, &mut dense);
        drop(composed);
        adamw_step(&mut model, &dense, &mut state, &hp)?;
        interval_loss += batch_loss / n;
        interval_steps += 1;
        if step % log_every == 0 || step == config.steps {
            let loss = interval_loss / interval_steps as f64;
            let valid_mrr = callbacks.on_log(step, loss, &model);
            log.push(MetricRow { step, loss, valid_mrr });
            interval_loss = 0.0;
            interval_steps = 0;
        }
    }
    Ok(TrainOutcome { model, log })
}
