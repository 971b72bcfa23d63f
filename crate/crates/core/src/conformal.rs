//! Calibration residuals and the split, kernel-weighted (LVD) and
//! MAD-normalized conformal intervals.
//!
//! All three intervals are symmetric around a center `yhat` with half-width
//! `Q(1 - alpha, F)`:
//!
//! * split: `F = (delta_inf + sum_i delta_{R_i}) / (m + 1)`
//! * LVD: `F = w_test delta_inf + sum_i w_i delta_{R_i}` with
//!   `w_i = K(x_i, x) / (K(x, x) + sum_j K(x_j, x))`
//! * MAD: LVD weights over `R_i / sigma_i`, rescaled by `sigma(x)`
//!
//! The `+inf` atom is never dropped. A test point with little similar
//! calibration data gets an infinite interval.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::{kernel_from_projected, KernelRegressor, MetricModel};
use crate::stats::{
    uniform_empirical, ExtendedValue, SortedEmpirical, WeightedEmpirical, QUANTILE_SLACK,
    WEIGHT_TOLERANCE,
};

/// Held-out residuals `R_i = |y_i - yhat_i|` with their normalized embeddings.
///
/// The predictions must come from an estimator that never saw these rows, and
/// the kernel must not have been trained on them either. Coverage rests on
/// that independence and nothing here can check it.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    embeddings: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    signed_residuals: Vec<f64>,
    mad_scales: Option<Vec<f64>>,
}

impl CalibrationSet {
    /// Builds a calibration set from signed residuals `y - yhat`.
    pub fn new(
        embeddings: Vec<Vec<f64>>,
        signed_residuals: Vec<f64>,
        mad_scales: Option<Vec<f64>>,
    ) -> Result<Self> {
        let set = Self::from_signed(signed_residuals, mad_scales)?;
        set.with_embeddings(embeddings)
    }

    fn from_signed(signed_residuals: Vec<f64>, mad_scales: Option<Vec<f64>>) -> Result<Self> {
        if let Some(r) = signed_residuals.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidValue(alloc::format!(
                "non-finite residual {r}"
            )));
        }
        if let Some(scales) = &mad_scales {
            if scales.len() != signed_residuals.len() {
                return Err(Error::LengthMismatch {
                    what: "MAD scales",
                    expected: signed_residuals.len(),
                    got: scales.len(),
                });
            }
            if let Some(i) = scales.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::NonPositiveMadScale(i));
            }
        }
        Ok(Self {
            embeddings: Vec::new(),
            residuals: signed_residuals.iter().map(|r| r.abs()).collect(),
            signed_residuals,
            mad_scales,
        })
    }

    /// Attaches normalized embeddings, one per residual.
    pub fn with_embeddings(mut self, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if embeddings.len() != self.residuals.len() {
            return Err(Error::LengthMismatch {
                what: "calibration embeddings",
                expected: self.residuals.len(),
                got: embeddings.len(),
            });
        }
        if let Some(first) = embeddings.first() {
            if let Some(bad) = embeddings.iter().find(|e| e.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        self.embeddings = embeddings;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn signed_residuals(&self) -> &[f64] {
        &self.signed_residuals
    }

    pub fn mad_scales(&self) -> Option<&[f64]> {
        self.mad_scales.as_deref()
    }

    fn residual_values(&self) -> Vec<ExtendedValue> {
        self.residuals
            .iter()
            .map(|&r| ExtendedValue::finite(r).expect("validated"))
            .collect()
    }

    fn check_embeddings(&self, model: &MetricModel) -> Result<()> {
        if self.embeddings.len() != self.residuals.len() {
            return Err(Error::LengthMismatch {
                what: "calibration embeddings",
                expected: self.residuals.len(),
                got: self.embeddings.len(),
            });
        }
        if let Some(e) = self.embeddings.first() {
            if e.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: e.len(),
                });
            }
        }
        Ok(())
    }
}

/// Residuals of `y_pred` against `y_true`, without embeddings.
///
/// Attach embeddings with [`CalibrationSet::with_embeddings`] before building
/// kernel-weighted intervals.
pub fn collect_residuals(
    y_true: &[f64],
    y_pred: &[f64],
    mad_pred: Option<&[f64]>,
) -> Result<CalibrationSet> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let signed = y_true.iter().zip(y_pred).map(|(y, p)| y - p).collect();
    CalibrationSet::from_signed(signed, mad_pred.map(<[f64]>::to_vec))
}

/// A symmetric interval `[center - half_width, center + half_width]`.
/// `half_width = +inf` is the uninformative interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn new(center: f64, half_width: ExtendedValue) -> Self {
        Self {
            center,
            half_width: half_width.get(),
        }
    }

    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn is_finite(&self) -> bool {
        self.half_width.is_finite()
    }

    /// Boundary points are covered.
    pub fn contains(&self, y: f64) -> bool {
        (y - self.center).abs() <= self.half_width
    }
}

fn check_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidValue(alloc::format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(1.0 - alpha)
}

/// Split-conformal interval.
pub fn split_interval(center: f64, cal: &CalibrationSet, alpha: f64) -> Result<Interval> {
    let level = check_alpha(alpha)?;
    let dist = uniform_empirical(&cal.residual_values(), true)?;
    Ok(Interval::new(center, dist.quantile(level)?))
}

/// Kernel weights `w_i` on the calibration residuals plus the `+inf` atom
/// carrying the test point's self-weight.
pub fn lvd_weights(
    model: &MetricModel,
    x_test: &[f64],
    cal: &CalibrationSet,
) -> Result<WeightedEmpirical> {
    cal.check_embeddings(model)?;
    let z = model.project(x_test)?;
    let kernels: Vec<f64> = cal
        .embeddings
        .iter()
        .map(|e| model.project(e).map(|ze| kernel_from_projected(&ze, &z)))
        .collect::<Result<_>>()?;
    let denom = kernel_denominator(&kernels);
    weighted_with_infinity(
        cal.residual_values().into_iter(),
        kernels.into_iter(),
        denom,
    )
}

/// `K(x, x) + sum_i K(x_i, x)`, summed in calibration order.
fn kernel_denominator(kernels: &[f64]) -> f64 {
    let mut denom = 1.0;
    for &k in kernels {
        denom += k;
    }
    denom
}

/// Atom `i` gets `kernels[i] / denom` and `+inf` gets `1 / denom`, the test
/// point's own `K(x, x) = 1`.
fn weighted_with_infinity(
    values: impl Iterator<Item = ExtendedValue>,
    kernels: impl Iterator<Item = f64>,
    denom: f64,
) -> Result<WeightedEmpirical> {
    let mut atoms: Vec<(ExtendedValue, f64)> =
        values.zip(kernels).map(|(v, k)| (v, k / denom)).collect();
    atoms.push((ExtendedValue::INFINITY, 1.0 / denom));
    WeightedEmpirical::new(atoms)
}

/// Kernel-weighted conformal interval.
pub fn lvd_interval(
    center: f64,
    model: &MetricModel,
    x_test: &[f64],
    cal: &CalibrationSet,
    alpha: f64,
) -> Result<Interval> {
    let level = check_alpha(alpha)?;
    let dist = lvd_weights(model, x_test, cal)?;
    Ok(Interval::new(center, dist.quantile(level)?))
}

fn check_sigma(sigma_test: f64) -> Result<()> {
    if !(sigma_test > 0.0 && sigma_test.is_finite()) {
        return Err(Error::InvalidValue(alloc::format!(
            "test MAD scale must be positive, got {sigma_test}"
        )));
    }
    Ok(())
}

/// Kernel-weighted interval over MAD-normalized residuals `R_i / sigma_i`,
/// rescaled by the test point's `sigma_test`.
pub fn mad_interval(
    center: f64,
    model: &MetricModel,
    x_test: &[f64],
    cal: &CalibrationSet,
    alpha: f64,
    sigma_test: f64,
) -> Result<Interval> {
    let level = check_alpha(alpha)?;
    check_sigma(sigma_test)?;
    let scales = cal.mad_scales().ok_or(Error::MadScalesRequired)?;
    let base = lvd_weights(model, x_test, cal)?;
    let atoms = base
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, &(v, w))| {
            let v = if v.is_infinite() {
                v
            } else {
                ExtendedValue::finite(v.get() / scales[i])?
            };
            Ok((v, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let q = WeightedEmpirical::new(atoms)?.quantile(level)?;
    Ok(Interval::new(center, scale_extended(q, sigma_test)))
}

fn scale_extended(q: ExtendedValue, sigma: f64) -> ExtendedValue {
    if q.is_infinite() {
        q
    } else {
        ExtendedValue::new(q.get() * sigma).expect("finite times positive finite")
    }
}

/// Where the interval center comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    /// A prediction supplied by the caller (typically the base network).
    Base,
    /// Nadaraya-Watson regression over the kernel's training set.
    KernelRegression,
}

/// Center for a normalized test embedding.
///
/// `Base` passes `base_pred` through. `KernelRegression` averages the training
/// targets held by `regressor`; the test point is not part of that set and so
/// never contributes to its own prediction.
pub fn predict_center(
    predictor: Predictor,
    model: &MetricModel,
    x_test: &[f64],
    regressor: Option<&KernelRegressor>,
    base_pred: Option<f64>,
) -> Result<f64> {
    match predictor {
        Predictor::Base => base_pred.ok_or(Error::MissingBasePrediction),
        Predictor::KernelRegression => {
            let regressor = regressor.ok_or_else(|| {
                Error::InvalidConfig("kernel-regression centers need the training set".into())
            })?;
            regressor.predict_projected(&model.project(x_test)?)
        }
    }
}

/// A calibration set bound to a model, with `A x_i` precomputed and the
/// residuals presorted.
///
/// Each test point then costs `O(m k)` kernel evaluations and a linear
/// cumulative scan. Any number of `alpha` levels reuse the same weights.
#[derive(Debug, Clone)]
pub struct PreparedCalibration<'a> {
    model: &'a MetricModel,
    cal: &'a CalibrationSet,
    projected: Vec<f64>,
    /// Calibration indices by ascending `R_i`.
    order: Vec<usize>,
    /// Calibration indices by ascending `R_i / sigma_i`, when scales exist.
    mad_order: Option<Vec<usize>>,
}

impl<'a> PreparedCalibration<'a> {
    pub fn new(model: &'a MetricModel, cal: &'a CalibrationSet) -> Result<Self> {
        cal.check_embeddings(model)?;
        let projected = model.project_all(&cal.embeddings)?;
        let mut order: Vec<usize> = (0..cal.len()).collect();
        order.sort_by(|&a, &b| cal.residuals[a].total_cmp(&cal.residuals[b]));
        let mad_order = cal.mad_scales().map(|s| {
            let mut o: Vec<usize> = (0..cal.len()).collect();
            o.sort_by(|&a, &b| (cal.residuals[a] / s[a]).total_cmp(&(cal.residuals[b] / s[b])));
            o
        });
        Ok(Self {
            model,
            cal,
            projected,
            order,
            mad_order,
        })
    }

    pub fn model(&self) -> &MetricModel {
        self.model
    }

    pub fn calibration(&self) -> &CalibrationSet {
        self.cal
    }

    fn kernels(&self, x_test: &[f64]) -> Result<Vec<f64>> {
        let z = self.model.project(x_test)?;
        let k = self.model.rank();
        Ok(self
            .projected
            .chunks_exact(k)
            .map(|zi| kernel_from_projected(zi, &z))
            .collect())
    }

    /// Same distribution as [`lvd_weights`], atoms in ascending order.
    pub fn lvd_distribution(&self, x_test: &[f64]) -> Result<WeightedEmpirical> {
        let kernels = self.kernels(x_test)?;
        let denom = kernel_denominator(&kernels);
        let values = self
            .order
            .iter()
            .map(|&i| ExtendedValue::finite(self.cal.residuals[i]).expect("validated"));
        weighted_with_infinity(values, self.order.iter().map(|&i| kernels[i]), denom)
    }

    pub fn split_half_widths(&self, alphas: &[f64]) -> Result<Vec<f64>> {
        let sorted = uniform_empirical(&self.cal.residual_values(), true)?.sorted();
        half_widths(&sorted, alphas, 1.0)
    }

    pub fn lvd_half_widths(&self, x_test: &[f64], alphas: &[f64]) -> Result<Vec<f64>> {
        let kernels = self.kernels(x_test)?;
        let residuals = &self.cal.residuals;
        scan_half_widths(&kernels, &self.order, |i| residuals[i], alphas, 1.0)
    }

    pub fn mad_half_widths(
        &self,
        x_test: &[f64],
        sigma_test: f64,
        alphas: &[f64],
    ) -> Result<Vec<f64>> {
        check_sigma(sigma_test)?;
        let (scales, order) = match (self.cal.mad_scales(), &self.mad_order) {
            (Some(s), Some(o)) => (s, o),
            _ => return Err(Error::MadScalesRequired),
        };
        let kernels = self.kernels(x_test)?;
        let residuals = &self.cal.residuals;
        scan_half_widths(
            &kernels,
            order,
            |i| residuals[i] / scales[i],
            alphas,
            sigma_test,
        )
    }
}

/// Quantiles of the kernel-weighted distribution with atoms `value(i)` of
/// weight `kernels[i] / denom` visited in ascending `order`, then `+inf`.
///
/// Performs the same additions as building the [`WeightedEmpirical`] and
/// sorting it, so results match the direct path bit for bit, without
/// materializing the atoms.
fn scan_half_widths(
    kernels: &[f64],
    order: &[usize],
    value: impl Fn(usize) -> f64,
    alphas: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    let denom = kernel_denominator(kernels);
    let mut cumulative = Vec::with_capacity(order.len() + 1);
    let mut acc = 0.0;
    for &i in order {
        acc += kernels[i] / denom;
        cumulative.push(acc);
    }
    acc += 1.0 / denom;
    cumulative.push(acc);
    if acc.is_nan() || (acc - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::UnnormalizedWeights(acc));
    }
    alphas
        .iter()
        .map(|&a| {
            let target = check_alpha(a)? * acc - QUANTILE_SLACK;
            let idx = cumulative.partition_point(|&c| c < target);
            let q = match order.get(idx) {
                Some(&i) => ExtendedValue::finite(value(i))?,
                None => ExtendedValue::INFINITY,
            };
            Ok(scale_extended(q, scale).get())
        })
        .collect()
}

fn half_widths(sorted: &SortedEmpirical, alphas: &[f64], scale: f64) -> Result<Vec<f64>> {
    alphas
        .iter()
        .map(|&a| {
            let q = sorted.quantile(check_alpha(a)?)?;
            Ok(scale_extended(q, scale).get())
        })
        .collect()
}
