//! Bounded histograms: the discretized measures every set embedding lives in.
//!
//! A histogram is a mass vector on the fixed grid `{0, 1, ..., d-1}`. Bars are
//! bounded by one and floored at a small positive mass so that the scaling
//! updates of the transport solver never see an exact zero.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WfreError};

/// Default lower bound applied to every bar.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-6;

/// A mass vector in `[mass_floor, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedHistogram {
    values: Vec<f64>,
    mass_floor: f64,
}

impl BoundedHistogram {
    /// Builds a histogram with the default floor, clamping every entry into
    /// `[DEFAULT_MASS_FLOOR, 1]`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_floor(values, DEFAULT_MASS_FLOOR)
    }

    pub fn with_floor(mut values: Vec<f64>, mass_floor: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(WfreError::Dimension(
                "histogram needs at least one bar".into(),
            ));
        }
        if !(mass_floor > 0.0 && mass_floor < 1.0) {
            return Err(WfreError::Validation(format!(
                "mass floor must lie in (0, 1), got {mass_floor}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(WfreError::Validation(format!(
                "bar {i} is not finite ({})",
                values[i]
            )));
        }
        for v in values.iter_mut() {
            *v = clamp_mass(*v, mass_floor);
        }
        Ok(Self { values, mass_floor })
    }

    /// Wraps values that are already known to be finite and inside the
    /// bounds. Entries are clamped anyway; only the validation is skipped.
    pub(crate) fn from_clamped(mut values: Vec<f64>, mass_floor: f64) -> Self {
        debug_assert!(!values.is_empty());
        for v in values.iter_mut() {
            *v = clamp_mass(*v, mass_floor);
        }
        Self { values, mass_floor }
    }

    /// Histogram with every bar at `value`.
    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn mass_floor(&self) -> f64 {
        self.mass_floor
    }

    pub fn total_mass(&self) -> f64 {
        total_mass(self)
    }
}

/// Clamp a raw value into the admissible bar range. NaN maps to the floor.
#[inline]
pub fn clamp_mass(v: f64, floor: f64) -> f64 {
    if v >= 1.0 {
        1.0
    } else if v > floor {
        v
    } else {
        floor
    }
}

/// Derivative of [`clamp_mass`]: one strictly inside the bounds, zero where
/// the clamp is active.
#[inline]
pub fn clamp_mass_grad(v: f64, floor: f64) -> f64 {
    if v < 1.0 && v > floor {
        1.0
    } else {
        0.0
    }
}

pub fn total_mass(h: &BoundedHistogram) -> f64 {
    h.values.iter().sum()
}

/// Generalized KL divergence between unnormalized nonnegative vectors:
/// `sum_i a_i log(a_i / b_i) - a_i + b_i`, with `0 log 0 = 0`.
///
/// Returns `+inf` when some `b_i = 0 < a_i`.
pub fn generalized_kl(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(WfreError::Shape(format!(
            "generalized_kl: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai < 0.0 || bi < 0.0 {
            return Err(WfreError::Validation(
                "generalized_kl expects nonnegative entries".into(),
            ));
        }
        if ai == 0.0 {
            acc += bi;
        } else if bi == 0.0 {
            return Ok(f64::INFINITY);
        } else {
            acc += ai * (ai / bi).ln() - ai + bi;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_values_are_kept() {
        let h = BoundedHistogram::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(h.values(), &[0.5, 0.5]);
        assert_eq!(h.dim(), 2);
    }

    #[test]
    fn out_of_range_entries_are_clamped() {
        let h = BoundedHistogram::new(vec![1.2, -0.1]).unwrap();
        assert_eq!(h.values(), &[1.0, DEFAULT_MASS_FLOOR]);
        let h = BoundedHistogram::with_floor(vec![0.0], 1e-6).unwrap();
        assert_eq!(h.values(), &[1e-6]);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(
            BoundedHistogram::new(vec![]),
            Err(WfreError::Dimension(_))
        ));
        assert!(matches!(
            BoundedHistogram::new(vec![0.2, f64::NAN]),
            Err(WfreError::Validation(_))
        ));
        assert!(matches!(
            BoundedHistogram::new(vec![f64::INFINITY]),
            Err(WfreError::Validation(_))
        ));
    }

    #[test]
    fn total_mass_examples() {
        assert_eq!(BoundedHistogram::new(vec![0.5, 0.5]).unwrap().total_mass(), 1.0);
        assert_eq!(BoundedHistogram::constant(4, 1.0).unwrap().total_mass(), 4.0);
        let floor = BoundedHistogram::constant(400, 0.0).unwrap();
        assert!((floor.total_mass() - 4e-4).abs() < 1e-15);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(generalized_kl(&[0.3], &[0.3]).unwrap(), 0.0);
        assert!((generalized_kl(&[0.0], &[0.8]).unwrap() - 0.8).abs() < 1e-15);
        let expected = 0.5 * 2f64.ln() - 0.25;
        assert!((generalized_kl(&[0.5], &[0.25]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.09657).abs() < 1e-5);
        assert_eq!(generalized_kl(&[0.1], &[0.0]).unwrap(), f64::INFINITY);
        assert!(matches!(
            generalized_kl(&[0.1], &[0.1, 0.2]),
            Err(WfreError::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn kl_of_self_is_zero(a in proptest::collection::vec(1e-6f64..10.0, 1..32)) {
            prop_assert!(generalized_kl(&a, &a).unwrap().abs() < 1e-12);
        }

        #[test]
        fn kl_is_nonnegative(
            pairs in proptest::collection::vec((0.0f64..5.0, 1e-9f64..5.0), 1..32)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(generalized_kl(&a, &b).unwrap() >= -1e-12);
        }

        #[test]
        fn construction_is_idempotent(v in proptest::collection::vec(-2.0f64..2.0, 1..64)) {
            let h = BoundedHistogram::new(v).unwrap();
            let again = BoundedHistogram::new(h.values().to_vec()).unwrap();
            prop_assert_eq!(h, again);
        }
    }
}
