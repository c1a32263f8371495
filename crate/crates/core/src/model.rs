//! Trainable parameters: entity logits plus the projection network, and
//! their checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, WfreError};
use crate::measures::{clamp_mass, clamp_mass_grad, BoundedHistogram, DEFAULT_MASS_FLOOR};
use crate::projection::{expand_composed_grad, init_params, logistic, ComposedGrad, ProjectionParams};

/// Entity logits are drawn uniformly from `[-ENTITY_INIT_RANGE, ENTITY_INIT_RANGE]`.
pub const ENTITY_INIT_RANGE: f64 = 2.0;

pub const CHECKPOINT_FORMAT: &str = "wfre-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub entities: usize,
    pub relations: usize,
    pub dim: usize,
    pub bases: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub entity_count: usize,
    pub relation_count: usize,
    pub dim: usize,
    /// `entity_count x dim`, row-major; histograms are their logistic.
    pub entity_logits: Vec<f64>,
    pub projection: ProjectionParams,
}

/// Gradients share the parameter layout.
pub type ModelGrads = ModelParams;

impl ModelParams {
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        if shape.entities == 0 {
            return Err(WfreError::Validation("model needs at least one entity".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entity_logits = (0..shape.entities * shape.dim)
            .map(|_| rng.gen_range(-ENTITY_INIT_RANGE..=ENTITY_INIT_RANGE))
            .collect();
        let projection = init_params(shape.dim, shape.bases, shape.layers, shape.relations, rng.gen())?;
        Ok(Self {
            entity_count: shape.entities,
            relation_count: shape.relations,
            dim: shape.dim,
            entity_logits,
            projection,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for b in out.buffers_mut() {
            b.fill(0.0);
        }
        out
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            entities: self.entity_count,
            relations: self.relation_count,
            dim: self.dim,
            bases: self.projection.num_bases,
            layers: self.projection.layers.len(),
        }
    }

    pub fn entity_logit_row(&self, e: usize) -> &[f64] {
        &self.entity_logits[e * self.dim..(e + 1) * self.dim]
    }

    pub(crate) fn entity_values(&self, e: usize) -> Vec<f64> {
        self.entity_logit_row(e)
            .iter()
            .map(|&z| clamp_mass(logistic(z), DEFAULT_MASS_FLOOR))
            .collect()
    }

    pub fn entity_histogram(&self, e: usize) -> Result<BoundedHistogram> {
        if e >= self.entity_count {
            return Err(WfreError::Lookup(format!(
                "entity {e} out of range ({} entities)",
                self.entity_count
            )));
        }
        Ok(BoundedHistogram::from_clamped(self.entity_values(e), DEFAULT_MASS_FLOOR))
    }

    pub fn entity_histograms(&self) -> Vec<BoundedHistogram> {
        (0..self.entity_count)
            .map(|e| BoundedHistogram::from_clamped(self.entity_values(e), DEFAULT_MASS_FLOOR))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.entity_logits.len() + self.projection.parameter_count()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Flat views of every parameter buffer: entity logits first, then the
    /// projection buffers layer by layer, then the relation coefficients.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = vec![self.entity_logits.as_slice()];
        out.extend(self.projection.buffers());
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.entity_logits.as_mut_slice()];
        out.extend(self.projection.buffers_mut());
        out
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.buffers()
            .iter()
            .flat_map(|b| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn check_consistent(&self) -> Result<()> {
        let bad = |m: String| Err(WfreError::Load(m));
        if self.entity_logits.len() != self.entity_count * self.dim {
            return bad(format!(
                "entity table holds {} values, expected {} x {}",
                self.entity_logits.len(),
                self.entity_count,
                self.dim
            ));
        }
        let p = &self.projection;
        if p.num_bases == 0 || p.layer_dims.len() < 2 || p.layer_dims[0] != self.dim || p.layer_dims.last() != Some(&self.dim) {
            return bad(format!("projection dims {:?} do not match dimension {}", p.layer_dims, self.dim));
        }
        if p.layers.len() + 1 != p.layer_dims.len() {
            return bad("projection layer count disagrees with its dims".into());
        }
        for (l, layer) in p.layers.iter().enumerate() {
            let (d_in, d_out) = (p.layer_dims[l], p.layer_dims[l + 1]);
            if layer.d_in != d_in
                || layer.d_out != d_out
                || layer.bases.len() != p.num_bases * d_in * d_out
                || layer.biases.len() != p.num_bases * d_out
            {
                return bad(format!("projection layer {l} has inconsistent buffers"));
            }
        }
        if p.relations.len() != self.relation_count * p.num_bases {
            return bad(format!(
                "relation table holds {} values, expected {} x {}",
                p.relations.len(),
                self.relation_count,
                p.num_bases
            ));
        }
        if !self.is_finite() {
            return bad("checkpoint contains non-finite parameters".into());
        }
        Ok(())
    }
}

/// Gradients touching only a few entities and relations.
///
/// Entity rows hold gradients with respect to logits; relation entries hold
/// gradients with respect to the composed weights.
#[derive(Debug, Clone, Default)]
pub struct SparseGrads {
    pub entities: BTreeMap<usize, Vec<f64>>,
    pub relations: BTreeMap<usize, ComposedGrad>,
}

impl SparseGrads {
    pub fn new() -> Self {
        Self::default()
    }

    fn entity_row(&mut self, e: usize, dim: usize) -> &mut Vec<f64> {
        self.entities.entry(e).or_insert_with(|| vec![0.0; dim])
    }

    /// Adds a gradient given with respect to the entity's histogram bars.
    pub fn add_entity_value_grad(&mut self, model: &ModelParams, e: usize, grad: &[f64], weight: f64) {
        let row = self.entity_row(e, model.dim);
        for ((dst, &z), g) in row.iter_mut().zip(model.entity_logit_row(e)).zip(grad) {
            let s = logistic(z);
            *dst += weight * g * s * (1.0 - s) * clamp_mass_grad(s, DEFAULT_MASS_FLOOR);
        }
    }

    pub fn relation_acc(&mut self, r: usize, model: &ModelParams) -> &mut ComposedGrad {
        self.relations
            .entry(r)
            .or_insert_with(|| ComposedGrad::zeros(r, &model.projection))
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: SparseGrads) {
        for (e, g) in other.entities {
            match self.entities.get_mut(&e) {
                Some(row) => row.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    self.entities.insert(e, g);
                }
            }
        }
        for (r, g) in other.relations {
            match self.relations.get_mut(&r) {
                Some(acc) => {
                    for (dst, src) in acc.weight.iter_mut().zip(&g.weight).chain(acc.bias.iter_mut().zip(&g.bias)) {
                        dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
                None => {
                    self.relations.insert(r, g);
                }
            }
        }
    }

    /// Writes the dense gradient `scale * self` into `out`, which must
    /// have the model's layout. Existing contents of `out` are kept.
    pub fn accumulate_into(&self, model: &ModelParams, scale: f64, out: &mut ModelGrads) {
        let d = model.dim;
        for (&e, g) in &self.entities {
            let dst = &mut out.entity_logits[e * d..(e + 1) * d];
            dst.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
        }
        for acc in self.relations.values() {
            if scale == 1.0 {
                expand_composed_grad(acc, &model.projection, &mut out.projection);
            } else {
                let mut scaled = acc.clone();
                for buf in scaled.weight.iter_mut().chain(scaled.bias.iter_mut()) {
                    buf.iter_mut().for_each(|x| *x *= scale);
                }
                expand_composed_grad(&scaled, &model.projection, &mut out.projection);
            }
        }
    }
}

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_fingerprint<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub shape: ModelShape,
    pub layer_dims: Vec<usize>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, fingerprint: impl Into<String>) -> Self {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: params.shape(),
            layer_dims: params.projection.layer_dims.clone(),
            fingerprint: fingerprint.into(),
        };
        Self { header, params }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| WfreError::Load(format!("malformed checkpoint: {e}")))?;
        let h = &ck.header;
        if h.format != CHECKPOINT_FORMAT {
            return Err(WfreError::Load(format!("not a checkpoint (format `{}`)", h.format)));
        }
        if h.version != CHECKPOINT_VERSION {
            return Err(WfreError::Load(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                h.version
            )));
        }
        if h.shape != ck.params.shape() || h.layer_dims != ck.params.projection.layer_dims {
            return Err(WfreError::Load("checkpoint header disagrees with its parameters".into()));
        }
        ck.params.check_consistent()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::fsutil::write_atomic(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| WfreError::Load(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape {
            entities: 7,
            relations: 3,
            dim: 10,
            bases: 2,
            layers: 1,
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(shape(), 4).unwrap();
        assert_eq!(a, ModelParams::init(shape(), 4).unwrap());
        assert_ne!(a, ModelParams::init(shape(), 5).unwrap());
        assert_eq!(a.parameter_count(), 70 + 2 * (100 + 10) + 6);
        let h = a.entity_histogram(6).unwrap();
        assert!(h.values().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(a.entity_histogram(7).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(shape(), 1).unwrap();
        let ck = Checkpoint::new(p.clone(), config_fingerprint(&("cfg", 1)));
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.entity_logits, p.entity_logits);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("model.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let p = ModelParams::init(shape(), 1).unwrap();
        let ck = Checkpoint::new(p, "x");
        let mut wrong = ck.clone();
        wrong.header.shape.dim = 11;
        assert!(matches!(Checkpoint::decode(&wrong.encode()), Err(WfreError::Load(_))));
        let mut short = ck.clone();
        short.params.entity_logits.pop();
        short.header = Checkpoint::new(short.params.clone(), "x").header;
        assert!(matches!(Checkpoint::decode(&short.encode()), Err(WfreError::Load(_))));
        let mut version = ck.clone();
        version.header.version = 99;
        assert!(Checkpoint::decode(&version.encode()).is_err());
        assert!(Checkpoint::decode(b"{").is_err());
        assert!(matches!(Checkpoint::load("/nonexistent/ck.json"), Err(WfreError::Load(_))));
    }

    #[test]
    fn fingerprint_tracks_content() {
        assert_eq!(config_fingerprint(&[1, 2]), config_fingerprint(&[1, 2]));
        assert_ne!(config_fingerprint(&[1, 2]), config_fingerprint(&[2, 1]));
        assert_eq!(config_fingerprint(&0).len(), 64);
    }
}
