//! Minibatch training of the kernel transform `A` by minimizing the
//! leave-one-out kernel-regression MSE with Adam.
//!
//! For a query point `i` with neighbors `j`, let `u_ij = A(x_i - x_j)`,
//! `d_ij = |u_ij|^2` and `K_ij = exp(-d_ij)`. Both predictors are ratios
//! `N_i / D_i` of kernel sums, so
//!
//! ```text
//! d yhat_i / d d_ij = -K_ij (y_j - yhat_i) / D_i
//! d d_ij / d A      = 2 u_ij (x_i - x_j)^T
//! ```
//!
//! and the gradient of `mean_i (yhat_i - y_i)^2` is an `O(B1 B2 h' k)` sum of
//! rank-one terms.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{fit_normalization, MetricModel};
use crate::linalg::Matrix;

/// Training hyperparameters. Defaults follow the reference protocol: Adam at
/// `1e-2`, batches of 100, at most 1000 batches, patience 50, top-3000
/// neighbors and rank 10.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Output rank `k`; clamped to the retained input dimension.
    pub rank: usize,
    pub learning_rate: f64,
    /// Query points per minibatch (`B1`).
    pub batch_size: usize,
    pub max_batches: usize,
    /// Stop after this many consecutive batches without a strictly lower loss.
    pub patience: usize,
    /// Only the `M` nearest points under the current `A` enter a prediction.
    pub neighbor_cap: usize,
    /// Optional random subsample of the capped neighbor set (`B2`).
    pub neighbor_sample: Option<usize>,
    /// Use the smoothness-regularized predictor.
    pub smooth: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            learning_rate: 1e-2,
            batch_size: 100,
            max_batches: 1000,
            patience: 50,
            neighbor_cap: 3000,
            neighbor_sample: None,
            smooth: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rank", self.rank),
            ("batch_size", self.batch_size),
            ("max_batches", self.max_batches),
            ("patience", self.patience),
            ("neighbor_cap", self.neighbor_cap),
            ("neighbor_sample", self.neighbor_sample.unwrap_or(1)),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{name} must be positive"
                )));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Full-data leave-one-out loss of the initial transform.
    pub initial_loss: f64,
    /// Full-data leave-one-out loss of the returned transform.
    pub final_loss: f64,
    /// Lowest minibatch loss seen during training.
    pub best_batch_loss: f64,
    pub batches_run: usize,
    /// Effective rank after clamping to `h'`.
    pub rank: usize,
    /// The best minibatch transform scored worse than the initial one on the
    /// full data, so the initial transform was returned.
    pub reverted_to_init: bool,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step = self.step.saturating_add(1);
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(self.step));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(self.step));
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// The `cap` nearest points to `i` under the current projection, excluding
/// `i`, in ascending index order. Distance ties go to the lower index.
pub(crate) fn top_neighbors(projected: &[f64], rank: usize, i: usize, cap: usize) -> Vec<usize> {
    let n = projected.len() / rank;
    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    if others.len() > cap {
        let zi = &projected[i * rank..(i + 1) * rank];
        let mut keyed: Vec<(f64, usize)> = others
            .iter()
            .map(|&j| {
                let zj = &projected[j * rank..(j + 1) * rank];
                (crate::linalg::squared_distance(zi, zj), j)
            })
            .collect();
        keyed.select_nth_unstable_by(cap - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others = keyed[..cap].iter().map(|&(_, j)| j).collect();
        others.sort_unstable();
    }
    others
}

/// Top-`M` neighbor sets for every point in `batch` under `model`.
pub fn resolve_neighbors(
    model: &MetricModel,
    batch: &[usize],
    xs: &[Vec<f64>],
    neighbor_cap: usize,
) -> Result<Vec<Vec<usize>>> {
    let projected = model.project_all(xs)?;
    Ok(batch
        .iter()
        .map(|&i| top_neighbors(&projected, model.rank(), i, neighbor_cap))
        .collect())
}

/// Loss and gradient over `batch` with explicit neighbor sets.
///
/// `neighbors[b]` belongs to `batch[b]`. Returns the mean squared
/// leave-one-out error and, when `want_grad`, its gradient with respect to
/// `A`.
pub fn batch_objective(
    model: &MetricModel,
    batch: &[usize],
    neighbors: &[Vec<usize>],
    xs: &[Vec<f64>],
    ys: &[f64],
    smooth: bool,
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::InvalidValue("empty batch".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            what: "targets",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if neighbors.len() != batch.len() {
        return Err(Error::LengthMismatch {
            what: "neighbor sets",
            expected: batch.len(),
            got: neighbors.len(),
        });
    }
    let k = model.rank();
    let h = model.dim();
    let projected = model.project_all(xs)?;
    let total_y: f64 = ys.iter().sum();
    let scale = 1.0 / batch.len() as f64;

    let mut grad = want_grad.then(|| Matrix::zeros(k, h));
    let mut loss = 0.0;
    let mut weights: Vec<f64> = Vec::new();
    let mut diffs: Vec<f64> = Vec::new();

    for (&i, nbrs) in batch.iter().zip(neighbors) {
        let zi = &projected[i * k..(i + 1) * k];
        // Squared projected distances, then weights relative to the
        // normalizer's largest term.
        weights.clear();
        weights.extend(
            nbrs.iter()
                .map(|&j| crate::linalg::squared_distance(zi, &projected[j * k..(j + 1) * k])),
        );
        let (mut num, mut den) = if smooth {
            if ys.len() < 2 {
                return Err(Error::NotEnoughData(
                    "need at least 2 training points".into(),
                ));
            }
            ((total_y - ys[i]) / (ys.len() - 1) as f64, 1.0)
        } else {
            if nbrs.is_empty() {
                return Err(Error::NoNeighbors);
            }
            (0.0, 0.0)
        };
        let shift = if smooth {
            0.0
        } else {
            weights.iter().copied().fold(f64::INFINITY, f64::min)
        };
        for (w, &j) in weights.iter_mut().zip(nbrs) {
            *w = libm::exp(-(*w - shift));
            num += *w * ys[j];
            den += *w;
        }
        let pred = num / den;
        let resid = pred - ys[i];
        if !resid.is_finite() {
            return Err(Error::Numerical(alloc::format!(
                "non-finite prediction for point {i}"
            )));
        }
        loss += resid * resid;

        if let Some(g) = grad.as_mut() {
            let outer = -4.0 * scale * resid / den;
            let g = g.as_mut_slice();
            for (&w, &j) in weights.iter().zip(nbrs) {
                let c = outer * w * (ys[j] - pred);
                if c == 0.0 {
                    continue;
                }
                diffs.clear();
                diffs.extend(xs[i].iter().zip(&xs[j]).map(|(a, b)| a - b));
                let zj = &projected[j * k..(j + 1) * k];
                for r in 0..k {
                    let cu = c * (zi[r] - zj[r]);
                    for (gc, d) in g[r * h..(r + 1) * h].iter_mut().zip(&diffs) {
                        *gc += cu * d;
                    }
                }
            }
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite loss".into()));
    }
    if let Some(g) = &grad {
        if !g.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
    }
    Ok((loss, grad))
}

/// Mean squared leave-one-out error over `batch` and its exact gradient in
/// `A`, with each point's neighbors set to its `config.neighbor_cap` nearest
/// under the current `A`.
pub fn loss_and_gradient(
    model: &MetricModel,
    batch: &[usize],
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &TrainConfig,
) -> Result<(f64, Matrix)> {
    let neighbors = resolve_neighbors(model, batch, xs, config.neighbor_cap)?;
    let (loss, grad) = batch_objective(model, batch, &neighbors, xs, ys, config.smooth, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Leave-one-out loss over every training point.
pub fn full_loss(
    model: &MetricModel,
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &TrainConfig,
) -> Result<f64> {
    let all: Vec<usize> = (0..xs.len()).collect();
    let neighbors = resolve_neighbors(model, &all, xs, config.neighbor_cap)?;
    Ok(batch_objective(model, &all, &neighbors, xs, ys, config.smooth, false)?.0)
}

/// Cycles through shuffled passes over `0..n`, one minibatch at a time.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
}

impl BatchSampler {
    fn new(n: usize, size: usize) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
            size: size.min(n),
        }
    }

    fn next(&mut self, rng: &mut impl Rng) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let batch = &self.order[self.cursor..self.cursor + self.size];
        self.cursor += self.size;
        batch
    }
}

/// Fits normalization on `raw` and trains the kernel transform.
///
/// `A` starts from i.i.d. `U[-1/sqrt(h'), 1/sqrt(h')]` draws. Each batch
/// recomputes the top-`M` neighbor sets under the current `A`. The transform
/// with the lowest minibatch loss is kept, unless it scores worse than the
/// initial transform on the full data.
pub fn train_metric(
    raw: &[Vec<f64>],
    ys: &[f64],
    config: &TrainConfig,
) -> Result<(MetricModel, TrainSummary)> {
    config.validate()?;
    if raw.len() != ys.len() {
        return Err(Error::LengthMismatch {
            what: "targets",
            expected: raw.len(),
            got: ys.len(),
        });
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidValue("non-finite target".into()));
    }
    let norm = fit_normalization(raw)?;
    let dim = norm.output_dim();
    if dim == 0 {
        return Err(Error::NotEnoughData(
            "every embedding dimension has std below the dead-dimension threshold".into(),
        ));
    }
    let rank = config.rank.min(dim);
    let xs = norm.normalize_all(raw)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let bound = 1.0 / libm::sqrt(dim as f64);
    let init: Vec<f64> = (0..rank * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let mut model = MetricModel::new(Matrix::from_row_major(rank, dim, init)?, norm)?;
    let initial = model.clone();
    let initial_loss = full_loss(&model, &xs, ys, config)?;

    let mut adam = Adam::new(rank * dim, config.learning_rate);
    let mut sampler = BatchSampler::new(xs.len(), config.batch_size);
    let mut best = model.clone();
    let mut best_batch_loss = f64::INFINITY;
    let mut stale = 0;
    let mut batches_run = 0;

    for _ in 0..config.max_batches {
        let batch = sampler.next(&mut rng).to_vec();
        let mut neighbors = resolve_neighbors(&model, &batch, &xs, config.neighbor_cap)?;
        if let Some(sample) = config.neighbor_sample {
            for set in &mut neighbors {
                if set.len() > sample {
                    let mut picked: Vec<usize> =
                        rand::seq::index::sample(&mut rng, set.len(), sample)
                            .into_iter()
                            .map(|p| set[p])
                            .collect();
                    picked.sort_unstable();
                    *set = picked;
                }
            }
        }
        let (loss, grad) =
            batch_objective(&model, &batch, &neighbors, &xs, ys, config.smooth, true)?;
        batches_run += 1;
        if loss < best_batch_loss {
            best_batch_loss = loss;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
        let grad = grad.expect("gradient requested");
        adam.update(model.transform_mut().as_mut_slice(), grad.as_slice());
        if !model.transform().is_finite() {
            return Err(Error::Numerical("transform diverged".into()));
        }
    }

    let mut final_loss = full_loss(&best, &xs, ys, config)?;
    let mut reverted_to_init = false;
    if final_loss > initial_loss {
        best = initial;
        final_loss = initial_loss;
        reverted_to_init = true;
    }
    Ok((
        best,
        TrainSummary {
            initial_loss,
            final_loss,
            best_batch_loss,
            batches_run,
            rank,
            reverted_to_init,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::loo_mean;
    use alloc::vec;

    fn tiny() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = vec![
            vec![0.0, 1.0],
            vec![1.0, -1.0],
            vec![2.0, 0.5],
            vec![-1.0, 0.0],
        ];
        let ys = vec![0.5, 1.0, 3.0, -2.0];
        (xs, ys)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn perfect_fit_is_stationary() {
        // Identical targets: every predictor returns that value.
        let (xs, _) = tiny();
        let ys = vec![2.0; 4];
        let model = MetricModel::on_normalized(Matrix::eye(2, 2)).unwrap();
        for smooth in [false, true] {
            let cfg = TrainConfig {
                smooth,
                ..TrainConfig::default()
            };
            let (loss, grad) = loss_and_gradient(&model, &[0, 1, 2, 3], &xs, &ys, &cfg).unwrap();
            assert_eq!(loss, 0.0);
            assert!(grad.as_slice().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn zero_transform_smooth_loss_is_loo_mean_error() {
        let (xs, ys) = tiny();
        let model = MetricModel::on_normalized(Matrix::zeros(1, 2)).unwrap();
        let cfg = TrainConfig::default();
        let batch = [0, 2, 3];
        let (loss, _) = loss_and_gradient(&model, &batch, &xs, &ys, &cfg).unwrap();
        let expected: f64 = batch
            .iter()
            .map(|&i| {
                let m = loo_mean(&ys, i).unwrap();
                (m - ys[i]) * (m - ys[i])
            })
            .sum::<f64>()
            / 3.0;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn top_neighbors_caps_and_excludes_self() {
        let projected = [0.0, 1.0, 5.0, 1.5, -0.2];
        assert_eq!(top_neighbors(&projected, 1, 0, 2), vec![1, 4]);
        assert_eq!(top_neighbors(&projected, 1, 0, 10), vec![1, 2, 3, 4]);
        // Tie between 0 and 2 at distance 1 from point 1 resolves to 0.
        let projected = [0.0, 1.0, 2.0];
        assert_eq!(top_neighbors(&projected, 1, 1, 1), vec![0]);
    }

    #[test]
    fn two_points_train_and_predict_each_other() {
        let raw = vec![vec![0.0], vec![1.0]];
        let ys = vec![1.0, 4.0];
        let cfg = TrainConfig {
            smooth: false,
            rank: 1,
            max_batches: 20,
            ..TrainConfig::default()
        };
        let (_, summary) = train_metric(&raw, &ys, &cfg).unwrap();
        assert_eq!(summary.initial_loss, 9.0);
        assert_eq!(summary.final_loss, 9.0);
    }

    #[test]
    fn all_dead_dimensions_fail() {
        let raw = vec![vec![1.0, 2.0]; 5];
        let ys = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            train_metric(&raw, &ys, &TrainConfig::default()),
            Err(Error::NotEnoughData(_))
        ));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = [1.0, -1.0];
        adam.update(&mut p, &[2.0, -3.0]);
        // First bias-corrected step has magnitude lr regardless of scale.
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
