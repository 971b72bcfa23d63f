//! Weighted empirical distributions over `[0, +inf]` and their step-function
//! quantiles.
//!
//! Every conformal interval in this crate is the `1 - alpha` quantile of one of
//! these distributions. The quantile is the infimum
//! `Q(alpha, F) = min { v : F(v) >= alpha }` with no interpolation between
//! atoms.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

/// Largest deviation of the total weight from 1 that is silently renormalized.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Absolute slack on the cumulative-weight comparison in the quantile scan.
///
/// Cumulative sums of weights such as `1/10` lose the last ulp (nine copies of
/// `0.1` sum to `0.8999999999999999`), which would otherwise push the quantile
/// one atom to the right at exact rational boundaries.
pub const QUANTILE_SLACK: f64 = 1e-12;

/// A real number or `+inf`.
///
/// NaN and `-inf` are rejected at construction, so the natural float order is
/// total on this type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedValue(f64);

impl ExtendedValue {
    pub const INFINITY: Self = Self(f64::INFINITY);
    pub const ZERO: Self = Self(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value == f64::NEG_INFINITY {
            return Err(Error::InvalidValue(alloc::format!(
                "extended value must be real or +inf, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn finite(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidValue(alloc::format!(
                "expected a finite value, got {value}"
            )));
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl Eq for ExtendedValue {}

impl PartialOrd for ExtendedValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtendedValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl From<ExtendedValue> for f64 {
    fn from(v: ExtendedValue) -> f64 {
        v.0
    }
}

/// A finite multiset of `(value, weight)` atoms whose weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEmpirical {
    atoms: Vec<(ExtendedValue, f64)>,
}

impl WeightedEmpirical {
    /// Validates the atoms. A total weight within [`WEIGHT_TOLERANCE`] of 1 is
    /// accepted, and quantiles are taken relative to the actual total.
    pub fn new(atoms: Vec<(ExtendedValue, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let mut total = 0.0;
        for &(_, w) in &atoms {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidValue(alloc::format!(
                    "atom weight must be finite and non-negative, got {w}"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::UnnormalizedWeights(total));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(ExtendedValue, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Sorts the atoms once so that many quantiles can be read off cheaply.
    pub fn sorted(&self) -> SortedEmpirical {
        let mut atoms = self.atoms.clone();
        // Stable, and linear on input that is already in order.
        atoms.sort_by_key(|a| a.0);
        let mut values = Vec::with_capacity(atoms.len());
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for (v, w) in atoms {
            acc += w;
            values.push(v);
            cumulative.push(acc);
        }
        SortedEmpirical { values, cumulative }
    }

    pub fn quantile(&self, alpha: f64) -> Result<ExtendedValue> {
        check_level(alpha)?;
        self.sorted().quantile(alpha)
    }
}

/// Atoms in ascending value order with their running weight totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedEmpirical {
    values: Vec<ExtendedValue>,
    cumulative: Vec<f64>,
}

impl SortedEmpirical {
    /// Smallest atom value whose cumulative weight reaches `alpha` of the
    /// total.
    ///
    /// Atoms with equal value are merged implicitly: the scan reports the
    /// value, not the position, so splitting a weight across equal atoms cannot
    /// change the result.
    pub fn quantile(&self, alpha: f64) -> Result<ExtendedValue> {
        check_level(alpha)?;
        let total = self.cumulative[self.cumulative.len() - 1];
        let target = alpha * total - QUANTILE_SLACK;
        let idx = self.cumulative.partition_point(|&c| c < target);
        // The total weight is 1 up to rounding, so only a level within
        // rounding of 1 can run off the end; the largest atom answers it.
        Ok(self
            .values
            .get(idx)
            .copied()
            .unwrap_or(self.values[self.values.len() - 1]))
    }

    pub fn values(&self) -> &[ExtendedValue] {
        &self.values
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidValue(alloc::format!(
            "quantile level must lie in (0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// `Q(alpha, dist)`: the smallest atom value `v` with `F(v) >= alpha`.
pub fn empirical_quantile(alpha: f64, dist: &WeightedEmpirical) -> Result<ExtendedValue> {
    dist.quantile(alpha)
}

/// Equal weights over `values`, plus one `+inf` atom when `include_infinity`.
///
/// With the `+inf` atom this is the split-conformal distribution
/// `(delta_inf + sum_i delta_{R_i}) / (m + 1)`.
pub fn uniform_empirical(
    values: &[ExtendedValue],
    include_infinity: bool,
) -> Result<WeightedEmpirical> {
    let count = values.len() + usize::from(include_infinity);
    if count == 0 {
        return Err(Error::EmptyDistribution);
    }
    let w = 1.0 / count as f64;
    let mut atoms: Vec<(ExtendedValue, f64)> = values.iter().map(|&v| (v, w)).collect();
    if include_infinity {
        atoms.push((ExtendedValue::INFINITY, w));
    }
    WeightedEmpirical::new(atoms)
}
