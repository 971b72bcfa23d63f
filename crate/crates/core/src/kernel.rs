//! Embedding normalization, the Mahalanobis-Gaussian kernel
//! `K(u, v) = exp(-|A(u - v)|^2)` and leave-one-out Nadaraya-Watson
//! prediction.
//!
//! All kernel arithmetic happens on projected coordinates `z = A x`: the
//! squared Mahalanobis distance is `|z_u - z_v|^2`, so each point is projected
//! once (`O(hk)`) and every pairwise kernel afterwards costs `O(k)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};

/// Dimensions whose training standard deviation falls below this are dropped.
pub const DEAD_DIM_THRESHOLD: f64 = 1e-3;

/// Per-dimension standardization fitted on the training embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    means: Vec<f64>,
    stds: Vec<f64>,
    kept_dims: Vec<usize>,
}

impl NormalizationStats {
    pub fn from_parts(means: Vec<f64>, stds: Vec<f64>, kept_dims: Vec<usize>) -> Result<Self> {
        if stds.len() != means.len() {
            return Err(Error::LengthMismatch {
                what: "stds",
                expected: means.len(),
                got: stds.len(),
            });
        }
        let h = means.len();
        for w in kept_dims.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidValue(
                    "kept_dims must be strictly increasing".into(),
                ));
            }
        }
        for &d in &kept_dims {
            if d >= h {
                return Err(Error::InvalidValue(alloc::format!(
                    "kept dimension {d} out of range for input dimension {h}"
                )));
            }
            if !stds[d].is_finite() || stds[d] < DEAD_DIM_THRESHOLD {
                return Err(Error::InvalidValue(alloc::format!(
                    "kept dimension {d} has std {} below {DEAD_DIM_THRESHOLD}",
                    stds[d]
                )));
            }
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidValue("non-finite mean".into()));
        }
        Ok(Self {
            means,
            stds,
            kept_dims,
        })
    }

    /// Zero means, unit stds and every dimension kept: `normalize` is the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
            kept_dims: (0..dim).collect(),
        }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn kept_dims(&self) -> &[usize] {
        &self.kept_dims
    }

    /// Raw embedding dimension `h`.
    pub fn input_dim(&self) -> usize {
        self.means.len()
    }

    /// Retained dimension `h'`.
    pub fn output_dim(&self) -> usize {
        self.kept_dims.len()
    }

    /// `(e[kept_dims[j]] - mean) / std` for each kept dimension `j`.
    pub fn normalize(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: e.len(),
            });
        }
        Ok(self
            .kept_dims
            .iter()
            .map(|&d| (e[d] - self.means[d]) / self.stds[d])
            .collect())
    }

    pub fn normalize_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.normalize(r)).collect()
    }
}

/// Fits per-dimension means and sample standard deviations (divisor `n - 1`)
/// and drops dimensions whose std is below [`DEAD_DIM_THRESHOLD`].
pub fn fit_normalization(embeddings: &[Vec<f64>]) -> Result<NormalizationStats> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::NotEnoughData(alloc::format!(
            "normalization needs at least 2 embeddings, got {n}"
        )));
    }
    let h = embeddings[0].len();
    for (i, row) in embeddings.iter().enumerate() {
        if row.len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(alloc::format!(
                "embedding row {i} has a non-finite entry"
            )));
        }
    }

    let mut means = vec![0.0; h];
    for row in embeddings {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; h];
    for row in embeddings {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut stds {
        *s = libm::sqrt(*s / (n - 1) as f64);
    }
    let kept_dims = (0..h).filter(|&d| stds[d] >= DEAD_DIM_THRESHOLD).collect();
    Ok(NormalizationStats {
        means,
        stds,
        kept_dims,
    })
}

/// The learned kernel: normalization followed by the low-rank map `A`
/// (`k x h'`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    transform: Matrix,
    norm: NormalizationStats,
}

impl MetricModel {
    pub fn new(transform: Matrix, norm: NormalizationStats) -> Result<Self> {
        if transform.cols() != norm.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: norm.output_dim(),
                got: transform.cols(),
            });
        }
        if transform.rows() == 0 {
            return Err(Error::InvalidValue("rank k must be positive".into()));
        }
        if transform.rows() > transform.cols() {
            return Err(Error::InvalidValue(alloc::format!(
                "rank k = {} exceeds retained dimension {}",
                transform.rows(),
                transform.cols()
            )));
        }
        if !transform.is_finite() {
            return Err(Error::InvalidValue(
                "transform has non-finite entries".into(),
            ));
        }
        Ok(Self { transform, norm })
    }

    /// A model over already-normalized inputs of dimension `transform.cols()`.
    pub fn on_normalized(transform: Matrix) -> Result<Self> {
        let dim = transform.cols();
        Self::new(transform, NormalizationStats::identity(dim))
    }

    pub fn transform(&self) -> &Matrix {
        &self.transform
    }

    pub(crate) fn transform_mut(&mut self) -> &mut Matrix {
        &mut self.transform
    }

    pub fn norm(&self) -> &NormalizationStats {
        &self.norm
    }

    /// Output rank `k`.
    pub fn rank(&self) -> usize {
        self.transform.rows()
    }

    /// Retained input dimension `h'`.
    pub fn dim(&self) -> usize {
        self.transform.cols()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `A x` for a normalized embedding.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.transform.mul_vec(x))
    }

    /// Projects every row into one flat `n x k` buffer.
    pub fn project_all(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let k = self.rank();
        let mut out = vec![0.0; xs.len() * k];
        for (x, z) in xs.iter().zip(out.chunks_exact_mut(k)) {
            self.check_dim(x)?;
            self.transform.mul_vec_into(x, z);
        }
        Ok(out)
    }

    /// `exp(-|A(u - v)|^2)` for normalized embeddings `u` and `v`.
    pub fn kernel_value(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        self.check_dim(v)?;
        let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        let z = self.transform.mul_vec(&diff);
        Ok(libm::exp(-z.iter().map(|c| c * c).sum::<f64>()))
    }
}

/// Kernel between two points given their projections `A u` and `A v`.
#[inline]
pub fn kernel_from_projected(zu: &[f64], zv: &[f64]) -> f64 {
    libm::exp(-squared_distance(zu, zv))
}

/// Nadaraya-Watson average `sum y_j K_j / sum K_j` from squared distances.
///
/// Weights are computed relative to the nearest neighbor,
/// `exp(-(d_j - d_min))`. The common factor `exp(-d_min)` cancels in the ratio,
/// and the nearest neighbor keeps weight 1 even when every raw kernel value
/// underflows.
pub(crate) fn nw_mean(sq_dists: &[f64], targets: impl Iterator<Item = f64>) -> Result<f64> {
    if sq_dists.is_empty() {
        return Err(Error::NoNeighbors);
    }
    let d_min = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut num, mut den) = (0.0, 0.0);
    for (&d, y) in sq_dists.iter().zip(targets) {
        let w = libm::exp(-(d - d_min));
        num += w * y;
        den += w;
    }
    let pred = num / den;
    if !pred.is_finite() {
        return Err(Error::Numerical(
            "non-finite kernel regression prediction".into(),
        ));
    }
    Ok(pred)
}

/// The smoothed average `(prior + sum y_j K_j) / (1 + sum K_j)`, where the
/// self-similarity `K(x, x) = 1` carries the `prior` mean.
pub(crate) fn nw_mean_smooth(
    prior: f64,
    sq_dists: &[f64],
    targets: impl Iterator<Item = f64>,
) -> f64 {
    let (mut num, mut den) = (prior, 1.0);
    for (&d, y) in sq_dists.iter().zip(targets) {
        let w = libm::exp(-d);
        num += w * y;
        den += w;
    }
    num / den
}

fn check_loo_inputs(
    model: &MetricModel,
    i: usize,
    xs: &[Vec<f64>],
    ys: &[f64],
    neighbors: &[usize],
) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            what: "targets",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if i >= xs.len() {
        return Err(Error::InvalidValue(alloc::format!(
            "index {i} out of range"
        )));
    }
    for &j in neighbors {
        if j == i {
            return Err(Error::InvalidValue(
                "neighbor set must exclude the query point".into(),
            ));
        }
        if j >= xs.len() {
            return Err(Error::InvalidValue(alloc::format!(
                "neighbor {j} out of range"
            )));
        }
    }
    model.check_dim(&xs[i])
}

fn neighbor_sq_dists(
    model: &MetricModel,
    i: usize,
    xs: &[Vec<f64>],
    neighbors: &[usize],
) -> Result<Vec<f64>> {
    let zi = model.project(&xs[i])?;
    neighbors
        .iter()
        .map(|&j| Ok(squared_distance(&zi, &model.project(&xs[j])?)))
        .collect()
}

/// Leave-one-out Nadaraya-Watson prediction for point `i` from `neighbors`.
pub fn loo_kr_predict(
    model: &MetricModel,
    i: usize,
    xs: &[Vec<f64>],
    ys: &[f64],
    neighbors: &[usize],
) -> Result<f64> {
    check_loo_inputs(model, i, xs, ys, neighbors)?;
    if neighbors.is_empty() {
        return Err(Error::NoNeighbors);
    }
    let d = neighbor_sq_dists(model, i, xs, neighbors)?;
    nw_mean(&d, neighbors.iter().map(|&j| ys[j]))
}

/// Smoothness-regularized leave-one-out prediction: the point's own kernel
/// weight `K(x_i, x_i) = 1` is assigned to the mean of all other targets.
pub fn loo_kr_predict_smooth(
    model: &MetricModel,
    i: usize,
    xs: &[Vec<f64>],
    ys: &[f64],
    neighbors: &[usize],
) -> Result<f64> {
    check_loo_inputs(model, i, xs, ys, neighbors)?;
    let prior = loo_mean(ys, i)?;
    let d = neighbor_sq_dists(model, i, xs, neighbors)?;
    Ok(nw_mean_smooth(prior, &d, neighbors.iter().map(|&j| ys[j])))
}

/// Mean of `ys` without entry `i`.
pub(crate) fn loo_mean(ys: &[f64], i: usize) -> Result<f64> {
    if ys.len() < 2 {
        return Err(Error::NotEnoughData(
            "leave-one-out mean needs at least 2 targets".into(),
        ));
    }
    let total: f64 = ys.iter().sum();
    Ok((total - ys[i]) / (ys.len() - 1) as f64)
}

/// Nadaraya-Watson regression over a fixed training set, used to predict
/// centers for points outside it.
#[derive(Debug, Clone)]
pub struct KernelRegressor {
    projected: Vec<f64>,
    targets: Vec<f64>,
    mean: f64,
    rank: usize,
    smooth: bool,
}

impl KernelRegressor {
    /// `xs` are normalized training embeddings.
    pub fn new(model: &MetricModel, xs: &[Vec<f64>], ys: &[f64], smooth: bool) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                what: "targets",
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(Error::NoNeighbors);
        }
        Ok(Self {
            projected: model.project_all(xs)?,
            targets: ys.to_vec(),
            mean: ys.iter().sum::<f64>() / ys.len() as f64,
            rank: model.rank(),
            smooth,
        })
    }

    pub fn is_smooth(&self) -> bool {
        self.smooth
    }

    /// Prediction at a point given its projection `A x`.
    pub fn predict_projected(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.rank {
            return Err(Error::DimensionMismatch {
                expected: self.rank,
                got: z.len(),
            });
        }
        let d: Vec<f64> = self
            .projected
            .chunks_exact(self.rank)
            .map(|zj| squared_distance(z, zj))
            .collect();
        let ys = self.targets.iter().copied();
        if self.smooth {
            Ok(nw_mean_smooth(self.mean, &d, ys))
        } else {
            nw_mean(&d, ys)
        }
    }
}
