//! Validity and discrimination metrics for a batch of test intervals.

use alloc::vec::Vec;

use crate::conformal::Interval;
use crate::error::{Error, Result};
use crate::kernel::{kernel_from_projected, MetricModel};

/// Metrics for one `(method, alpha)` group of intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Marginal coverage rate.
    pub mcr: f64,
    /// Coverage over the top and bottom response deciles; `None` below 10
    /// test points.
    pub tcr: Option<f64>,
    /// Width-vs-residual AUROC; `None` when all residuals land on one side of
    /// the median.
    pub auroc: Option<f64>,
    /// Mean absolute deviation of the centers.
    pub mad: f64,
    /// Mean full width `2 * half_width` over finite intervals.
    pub mean_finite_width: Option<f64>,
    pub finite_count: usize,
    pub n_test: usize,
}

impl EvalReport {
    pub fn compute(intervals: &[Interval], y_true: &[f64]) -> Result<Self> {
        let mcr = marginal_coverage(intervals, y_true)?;
        let tcr = match tail_coverage(intervals, y_true) {
            Ok(v) => Some(v),
            Err(Error::TailsUndefined(_)) => None,
            Err(e) => return Err(e),
        };
        let widths: Vec<f64> = intervals.iter().map(|iv| 2.0 * iv.half_width).collect();
        let residuals: Vec<f64> = intervals
            .iter()
            .zip(y_true)
            .map(|(iv, y)| (y - iv.center).abs())
            .collect();
        let auroc = match discrimination_auroc(&widths, &residuals) {
            Ok(v) => Some(v),
            Err(Error::AurocUndefined) => None,
            Err(e) => return Err(e),
        };
        let centers: Vec<f64> = intervals.iter().map(|iv| iv.center).collect();
        let (finite_count, mean_finite_width) = width_stats(intervals)?;
        Ok(Self {
            mcr,
            tcr,
            auroc,
            mad: mean_abs_deviation(&centers, y_true)?,
            mean_finite_width,
            finite_count,
            n_test: intervals.len(),
        })
    }
}

fn check_aligned(n: usize, m: usize) -> Result<()> {
    if n != m {
        return Err(Error::LengthMismatch {
            what: "targets",
            expected: n,
            got: m,
        });
    }
    if n == 0 {
        return Err(Error::NotEnoughData("no test points".into()));
    }
    Ok(())
}

fn covered_fraction<'a>(pairs: impl Iterator<Item = (&'a Interval, &'a f64)>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (iv, &y) in pairs {
        total += 1;
        if iv.contains(y) {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

/// Fraction of intervals containing their target.
pub fn marginal_coverage(intervals: &[Interval], y_true: &[f64]) -> Result<f64> {
    check_aligned(intervals.len(), y_true.len())?;
    Ok(covered_fraction(intervals.iter().zip(y_true)))
}

/// Indices of the `ceil(n / 10)` smallest and `ceil(n / 10)` largest targets,
/// ranked with ties in index order.
pub fn tail_indices(y_true: &[f64]) -> Result<Vec<usize>> {
    let n = y_true.len();
    if n < 10 {
        return Err(Error::TailsUndefined(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y_true[a].total_cmp(&y_true[b]));
    let per_tail = n.div_ceil(10);
    let mut tails: Vec<usize> = order[..per_tail]
        .iter()
        .chain(&order[n - per_tail..])
        .copied()
        .collect();
    tails.sort_unstable();
    Ok(tails)
}

/// Coverage restricted to the pooled top and bottom deciles of `y_true`.
pub fn tail_coverage(intervals: &[Interval], y_true: &[f64]) -> Result<f64> {
    check_aligned(intervals.len(), y_true.len())?;
    let tails = tail_indices(y_true)?;
    Ok(covered_fraction(
        tails.iter().map(|&i| (&intervals[i], &y_true[i])),
    ))
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Average 1-based ranks with ties sharing their mean rank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = alloc::vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// AUROC of interval width as a score for "absolute residual strictly above
/// the median residual".
///
/// Residuals equal to the median are negatives. Infinite widths rank above
/// every finite width. Ties get midranks (Mann-Whitney).
pub fn discrimination_auroc(widths: &[f64], abs_residuals: &[f64]) -> Result<f64> {
    check_aligned(widths.len(), abs_residuals.len())?;
    if widths.len() < 2 {
        return Err(Error::NotEnoughData("AUROC needs at least 2 points".into()));
    }
    if widths.iter().chain(abs_residuals).any(|v| v.is_nan()) {
        return Err(Error::InvalidValue("NaN width or residual".into()));
    }
    let threshold = median(abs_residuals);
    let labels: Vec<bool> = abs_residuals.iter().map(|&r| r > threshold).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::AurocUndefined);
    }
    let ranks = midranks(widths);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Mean of `|y - center|`.
pub fn mean_abs_deviation(centers: &[f64], y_true: &[f64]) -> Result<f64> {
    check_aligned(centers.len(), y_true.len())?;
    let total: f64 = centers.iter().zip(y_true).map(|(c, y)| (y - c).abs()).sum();
    Ok(total / centers.len() as f64)
}

/// Number of finite intervals and their mean full width.
pub fn width_stats(intervals: &[Interval]) -> Result<(usize, Option<f64>)> {
    if intervals.is_empty() {
        return Err(Error::NotEnoughData("no intervals".into()));
    }
    let (count, total) = intervals
        .iter()
        .filter(|iv| iv.is_finite())
        .fold((0usize, 0.0), |(c, t), iv| (c + 1, t + 2.0 * iv.half_width));
    Ok((count, (count > 0).then(|| total / count as f64)))
}

/// Kernel-weighted coverage around `center_x`:
/// `sum_i K(center_x, x_i) covered_i / sum_i K(center_x, x_i)`.
///
/// All embeddings are normalized.
pub fn local_coverage_estimate(
    model: &MetricModel,
    center_x: &[f64],
    intervals: &[Interval],
    y_true: &[f64],
    x_test: &[Vec<f64>],
) -> Result<f64> {
    check_aligned(intervals.len(), y_true.len())?;
    if x_test.len() != intervals.len() {
        return Err(Error::LengthMismatch {
            what: "test embeddings",
            expected: intervals.len(),
            got: x_test.len(),
        });
    }
    let zc = model.project(center_x)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((iv, &y), x) in intervals.iter().zip(y_true).zip(x_test) {
        let k = kernel_from_projected(&zc, &model.project(x)?);
        den += k;
        if iv.contains(y) {
            num += k;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroKernelMass);
    }
    Ok(num / den)
}
