//! Relation-conditioned projection: a stack of logistic affine layers whose
//! weights are a relation-specific mixture of shared bases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::measures::{clamp_mass, clamp_mass_grad, BoundedHistogram};

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shared bases of one layer: `K` weight matrices (`d_out x d_in`, row-major,
/// stored back to back) and `K` bias vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub bases: Vec<f64>,
    pub biases: Vec<f64>,
}

impl BaseLayer {
    fn zeros(d_in: usize, d_out: usize, k: usize) -> Self {
        Self {
            d_in,
            d_out,
            bases: vec![0.0; k * d_out * d_in],
            biases: vec![0.0; k * d_out],
        }
    }

    pub fn basis(&self, j: usize) -> &[f64] {
        let n = self.d_out * self.d_in;
        &self.bases[j * n..(j + 1) * n]
    }

    pub fn bias(&self, j: usize) -> &[f64] {
        &self.biases[j * self.d_out..(j + 1) * self.d_out]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub num_bases: usize,
    pub layer_dims: Vec<usize>,
    pub layers: Vec<BaseLayer>,
    /// Relation embeddings, `relation_count x num_bases`, row-major.
    pub relations: Vec<f64>,
}

impl ProjectionParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(layer_dims: &[usize], num_bases: usize, relation_count: usize) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(WfreError::Validation(format!(
                "layer dims must list at least two positive sizes, got {layer_dims:?}"
            )));
        }
        if layer_dims.first() != layer_dims.last() {
            return Err(WfreError::Validation(format!(
                "projection must map back to the input dimension, got {layer_dims:?}"
            )));
        }
        if num_bases == 0 {
            return Err(WfreError::Validation("need at least one basis".into()));
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| BaseLayer::zeros(w[0], w[1], num_bases))
            .collect();
        Ok(Self {
            num_bases,
            layer_dims: layer_dims.to_vec(),
            layers,
            relations: vec![0.0; relation_count * num_bases],
        })
    }

    pub fn dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len() / self.num_bases
    }

    pub fn relation(&self, r: usize) -> &[f64] {
        &self.relations[r * self.num_bases..(r + 1) * self.num_bases]
    }

    pub fn relation_mut(&mut self, r: usize) -> &mut [f64] {
        let k = self.num_bases;
        &mut self.relations[r * k..(r + 1) * k]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.bases.len() + l.biases.len())
            .sum::<usize>()
            + self.relations.len()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(&l.bases);
            out.push(&l.biases);
        }
        out.push(&self.relations);
        out
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(&mut l.bases);
            out.push(&mut l.biases);
        }
        out.push(&mut self.relations);
        out
    }

    fn check_relation(&self, r: usize) -> Result<()> {
        if r >= self.relation_count() {
            return Err(WfreError::Lookup(format!(
                "relation {r} out of range ({} relations)",
                self.relation_count()
            )));
        }
        Ok(())
    }

    /// Materializes `W_r` and `b_r` for every layer.
    pub fn compose(&self, r: usize) -> Result<ComposedRelation> {
        self.check_relation(r)?;
        let coeffs = self.relation(r);
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let mut weight = vec![0.0; layer.d_out * layer.d_in];
                let mut bias = vec![0.0; layer.d_out];
                for (j, &c) in coeffs.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    for (w, v) in weight.iter_mut().zip(layer.basis(j)) {
                        *w += c * v;
                    }
                    for (b, a) in bias.iter_mut().zip(layer.bias(j)) {
                        *b += c * a;
                    }
                }
                ComposedLayer {
                    d_in: layer.d_in,
                    d_out: layer.d_out,
                    weight,
                    bias,
                }
            })
            .collect();
        Ok(ComposedRelation { relation: r, layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Effective per-layer weights of one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedRelation {
    pub relation: usize,
    pub layers: Vec<ComposedLayer>,
}

/// Random parameters with bases scaled so that the `1/K`-weighted mixture
/// has roughly unit-variance pre-activations.
pub fn init_params(
    d: usize,
    num_bases: usize,
    layer_count: usize,
    relation_count: usize,
    seed: u64,
) -> Result<ProjectionParams> {
    if d == 0 || layer_count == 0 {
        return Err(WfreError::Validation(
            "dimension and layer count must be positive".into(),
        ));
    }
    let dims = vec![d; layer_count + 1];
    let mut params = ProjectionParams::zeros(&dims, num_bases, relation_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = num_bases as f64;
    for layer in &mut params.layers {
        let half = (3.0 * k / layer.d_in as f64).sqrt();
        for w in layer.bases.iter_mut().chain(layer.biases.iter_mut()) {
            *w = rng.gen_range(-half..=half);
        }
    }
    for r in params.relations.iter_mut() {
        *r = rng.gen_range(0.5..1.5) / k;
    }
    Ok(params)
}

/// Inverted dropout on layer inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputDropout {
    pub p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    input: Vec<f64>,
    /// Per-input scale: 0 for dropped entries, `1/(1-p)` otherwise.
    keep: Option<Vec<f64>>,
    output: Vec<f64>,
}

/// Everything a backward pass through [`project_with_cache`] needs.
#[derive(Debug, Clone)]
pub struct ProjectionCache {
    pub relation: usize,
    layers: Vec<LayerCache>,
    /// Pre-floor output, used for the clamp derivative.
    raw_output: Vec<f64>,
    mass_floor: f64,
}

pub fn project(h: &BoundedHistogram, relation: usize, params: &ProjectionParams) -> Result<BoundedHistogram> {
    let composed = params.compose(relation)?;
    check_input(h.dim(), params)?;
    let (out, _) = forward_composed(h.values(), &composed, None, h.mass_floor(), false);
    Ok(BoundedHistogram::from_clamped(out, h.mass_floor()))
}

pub fn project_with_cache(
    h: &BoundedHistogram,
    relation: usize,
    params: &ProjectionParams,
    dropout: Option<InputDropout>,
) -> Result<(BoundedHistogram, ProjectionCache)> {
    let composed = params.compose(relation)?;
    check_input(h.dim(), params)?;
    let (out, cache) = forward_composed(h.values(), &composed, dropout, h.mass_floor(), true);
    Ok((
        BoundedHistogram::from_clamped(out, h.mass_floor()),
        cache.expect("cache requested"),
    ))
}

fn check_input(d: usize, params: &ProjectionParams) -> Result<()> {
    if d != params.dim() {
        return Err(WfreError::Shape(format!(
            "projection expects {} bars, got {d}",
            params.dim()
        )));
    }
    Ok(())
}

/// Forward pass on pre-composed weights. Returns the floored output.
pub(crate) fn forward_composed(
    h: &[f64],
    composed: &ComposedRelation,
    dropout: Option<InputDropout>,
    mass_floor: f64,
    keep_cache: bool,
) -> (Vec<f64>, Option<ProjectionCache>) {
    let mut rng = dropout
        .filter(|d| d.p > 0.0)
        .map(|d| (d.p, ChaCha8Rng::seed_from_u64(d.seed)));
    let mut caches = Vec::new();
    let mut x = h.to_vec();
    for layer in &composed.layers {
        let keep = rng.as_mut().map(|(p, rng)| {
            let scale = 1.0 / (1.0 - *p);
            (0..layer.d_in)
                .map(|_| if rng.gen::<f64>() < *p { 0.0 } else { scale })
                .collect::<Vec<f64>>()
        });
        let input: Vec<f64> = match &keep {
            Some(k) => x.iter().zip(k).map(|(a, b)| a * b).collect(),
            None => x.clone(),
        };
        let out: Vec<f64> = (0..layer.d_out)
            .map(|o| {
                let row = &layer.weight[o * layer.d_in..(o + 1) * layer.d_in];
                let z: f64 = row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>() + layer.bias[o];
                logistic(z)
            })
            .collect();
        if keep_cache {
            caches.push(LayerCache {
                input: x,
                keep,
                output: out.clone(),
            });
        }
        x = out;
    }
    let raw_output = x.clone();
    for v in x.iter_mut() {
        *v = clamp_mass(*v, mass_floor);
    }
    let cache = keep_cache.then(|| ProjectionCache {
        relation: composed.relation,
        layers: caches,
        raw_output,
        mass_floor,
    });
    (x, cache)
}

/// Per-relation gradients with respect to the composed `W_r` and `b_r`.
///
/// Accumulating here and expanding once per relation avoids touching all `K`
/// bases for every sample.
#[derive(Debug, Clone)]
pub struct ComposedGrad {
    pub relation: usize,
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl ComposedGrad {
    pub fn zeros(relation: usize, params: &ProjectionParams) -> Self {
        Self {
            relation,
            weight: params.layers.iter().map(|l| vec![0.0; l.d_in * l.d_out]).collect(),
            bias: params.layers.iter().map(|l| vec![0.0; l.d_out]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|b| b.iter().all(|&x| x == 0.0))
    }
}

/// Backpropagates `grad_out` through one cached forward pass, adding into
/// `acc` and returning the gradient with respect to the input histogram.
pub(crate) fn backward_composed(
    grad_out: &[f64],
    cache: &ProjectionCache,
    composed: &ComposedRelation,
    acc: &mut ComposedGrad,
) -> Vec<f64> {
    let mut g: Vec<f64> = grad_out
        .iter()
        .zip(&cache.raw_output)
        .map(|(g, &y)| g * clamp_mass_grad(y, cache.mass_floor))
        .collect();
    for (l, layer) in composed.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let input: Vec<f64> = match &lc.keep {
            Some(k) => lc.input.iter().zip(k).map(|(a, b)| a * b).collect(),
            None => lc.input.clone(),
        };
        let dz: Vec<f64> = g
            .iter()
            .zip(&lc.output)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        let gw = &mut acc.weight[l];
        let gb = &mut acc.bias[l];
        let mut g_in = vec![0.0; layer.d_in];
        for (o, &dzo) in dz.iter().enumerate() {
            if dzo == 0.0 {
                continue;
            }
            gb[o] += dzo;
            let row = &layer.weight[o * layer.d_in..(o + 1) * layer.d_in];
            let grow = &mut gw[o * layer.d_in..(o + 1) * layer.d_in];
            for i in 0..layer.d_in {
                grow[i] += dzo * input[i];
                g_in[i] += dzo * row[i];
            }
        }
        if let Some(k) = &lc.keep {
            for (gi, ki) in g_in.iter_mut().zip(k) {
                *gi *= ki;
            }
        }
        g = g_in;
    }
    g
}

/// Expands composed-weight gradients into basis, bias and relation gradients.
pub fn expand_composed_grad(
    acc: &ComposedGrad,
    params: &ProjectionParams,
    grads: &mut ProjectionParams,
) {
    let r = acc.relation;
    let coeffs = params.relation(r).to_vec();
    let mut g_rel = vec![0.0; params.num_bases];
    for (l, layer) in params.layers.iter().enumerate() {
        let gw = &acc.weight[l];
        let gb = &acc.bias[l];
        let n = layer.d_in * layer.d_out;
        let glayer = &mut grads.layers[l];
        for (j, &c) in coeffs.iter().enumerate() {
            let basis = layer.basis(j);
            let bias = layer.bias(j);
            g_rel[j] += dot(gw, basis) + dot(gb, bias);
            let gbasis = &mut glayer.bases[j * n..(j + 1) * n];
            for (dst, src) in gbasis.iter_mut().zip(gw) {
                *dst += c * src;
            }
            let gbias = &mut glayer.biases[j * layer.d_out..(j + 1) * layer.d_out];
            for (dst, src) in gbias.iter_mut().zip(gb) {
                *dst += c * src;
            }
        }
    }
    for (dst, src) in grads.relation_mut(r).iter_mut().zip(&g_rel) {
        *dst += src;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradients of one projection with respect to its input and all parameters.
#[derive(Debug, Clone)]
pub struct ProjectionGrad {
    pub input: Vec<f64>,
    pub params: ProjectionParams,
}

pub fn project_backward(
    grad_out: &[f64],
    cache: Option<&ProjectionCache>,
    params: &ProjectionParams,
) -> Result<ProjectionGrad> {
    let cache = cache.ok_or_else(|| WfreError::State("projection backward needs a forward cache".into()))?;
    if grad_out.len() != params.dim() || cache.raw_output.len() != params.dim() {
        return Err(WfreError::Shape(format!(
            "gradient has {} entries, projection outputs {}",
            grad_out.len(),
            params.dim()
        )));
    }
    let composed = params.compose(cache.relation)?;
    let mut acc = ComposedGrad::zeros(cache.relation, params);
    let input = backward_composed(grad_out, cache, &composed, &mut acc);
    let mut grads = ProjectionParams::zeros(&params.layer_dims, params.num_bases, params.relation_count())?;
    expand_composed_grad(&acc, params, &mut grads);
    Ok(ProjectionGrad {
        input,
        params: grads,
    })
}
