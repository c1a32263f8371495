//! Element-wise fuzzy-logic set operations on histograms.
//!
//! Each bar is read as a truth value in `[0, 1]`; intersection and union are a
//! t-norm and its dual t-conorm under the negation `1 - x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};
use crate::measures::BoundedHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TNormKind {
    #[default]
    Product,
    Godel,
    Lukasiewicz,
}

impl TNormKind {
    pub const ALL: [TNormKind; 3] = [TNormKind::Product, TNormKind::Godel, TNormKind::Lukasiewicz];

    #[inline]
    pub fn tnorm(self, x: f64, y: f64) -> f64 {
        match self {
            TNormKind::Product => x * y,
            TNormKind::Godel => x.min(y),
            TNormKind::Lukasiewicz => (x + y - 1.0).max(0.0),
        }
    }

    #[inline]
    pub fn conorm(self, x: f64, y: f64) -> f64 {
        match self {
            TNormKind::Product => x + y - x * y,
            TNormKind::Godel => x.max(y),
            TNormKind::Lukasiewicz => (x + y).min(1.0),
        }
    }

    /// Partial derivatives `(d/dx, d/dy)` of the t-norm.
    #[inline]
    pub fn tnorm_grad(self, x: f64, y: f64) -> (f64, f64) {
        match self {
            TNormKind::Product => (y, x),
            TNormKind::Godel => {
                if x <= y {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            TNormKind::Lukasiewicz => {
                if x + y - 1.0 > 0.0 {
                    (1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    #[inline]
    pub fn conorm_grad(self, x: f64, y: f64) -> (f64, f64) {
        match self {
            TNormKind::Product => (1.0 - y, 1.0 - x),
            TNormKind::Godel => {
                if x >= y {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            TNormKind::Lukasiewicz => {
                if x + y < 1.0 {
                    (1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

impl std::str::FromStr for TNormKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "product" => Ok(TNormKind::Product),
            "godel" | "goedel" | "minimum" => Ok(TNormKind::Godel),
            "lukasiewicz" => Ok(TNormKind::Lukasiewicz),
            other => Err(format!("unknown t-norm `{other}`")),
        }
    }
}

fn zip_with(
    h1: &BoundedHistogram,
    h2: &BoundedHistogram,
    f: impl Fn(f64, f64) -> f64,
) -> Result<BoundedHistogram> {
    if h1.dim() != h2.dim() {
        return Err(WfreError::Shape(format!(
            "set operation on {} and {} bars",
            h1.dim(),
            h2.dim()
        )));
    }
    let vals = h1
        .values()
        .iter()
        .zip(h2.values())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(BoundedHistogram::from_clamped(vals, h1.mass_floor()))
}

pub fn intersect(
    h1: &BoundedHistogram,
    h2: &BoundedHistogram,
    kind: TNormKind,
) -> Result<BoundedHistogram> {
    zip_with(h1, h2, |x, y| kind.tnorm(x, y))
}

pub fn union(h1: &BoundedHistogram, h2: &BoundedHistogram, kind: TNormKind) -> Result<BoundedHistogram> {
    zip_with(h1, h2, |x, y| kind.conorm(x, y))
}

pub fn complement(h: &BoundedHistogram) -> BoundedHistogram {
    let vals = h.values().iter().map(|x| 1.0 - x).collect();
    BoundedHistogram::from_clamped(vals, h.mass_floor())
}

/// Positions replaced by one half before complementing, each with
/// probability `p`.
pub fn dropout_mask(dim: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..dim).map(|_| p > 0.0 && rng.gen::<f64>() < p).collect()
}

/// Complement with dropout: in training mode every bar is independently set
/// to `1/2` with probability `p` before complementing, so dropped bars stay at
/// `1/2`. Outside training this is [`complement`].
pub fn complement_with_dropout(
    h: &BoundedHistogram,
    p: f64,
    training: bool,
    seed: u64,
) -> Result<BoundedHistogram> {
    if !(0.0..=1.0).contains(&p) {
        return Err(WfreError::Validation(format!(
            "dropout probability must lie in [0, 1], got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok(complement(h));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_mask(h.dim(), p, &mut rng);
    let vals = h
        .values()
        .iter()
        .zip(&mask)
        .map(|(x, &drop)| if drop { 0.5 } else { 1.0 - x })
        .collect();
    Ok(BoundedHistogram::from_clamped(vals, h.mass_floor()))
}
