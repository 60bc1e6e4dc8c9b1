//! Gaussian kernel, Gram matrices, bandwidth selection, mean embeddings and
//! MMD estimation.
//!
//! The kernel is `k(x, y) = exp(-|x - y|^2 / (2 sigma^2))`, so `k(z, z) = 1`
//! and every feature map it induces is bounded by one.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::par::{self, Execution};
use crate::rng;

/// Largest sample the median heuristic looks at.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = Self { family: KernelFamily::Gaussian, bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        check_finite(x, "kernel argument")?;
        check_finite(y, "kernel argument")?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }
}

fn check_points(points: &[Vec<f64>], what: &str) -> Result<usize> {
    let first = points.first().ok_or_else(|| Error::Empty(what.to_string()))?;
    let dim = first.len();
    for p in points {
        check_dim(dim, p.len())?;
        check_finite(p, what)?;
    }
    Ok(dim)
}

/// Dense kernel matrix over a point set.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub points: Vec<Vec<f64>>,
    pub spec: KernelSpec,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.points.len()
    }

    /// Passes a Cholesky factorization after adding `1e-10 * n` to the
    /// diagonal.
    pub fn is_psd(&self) -> bool {
        let n = self.dim();
        let mut shifted = self.entries.clone();
        for i in 0..n {
            shifted[(i, i)] += 1e-10 * n as f64;
        }
        shifted.cholesky().is_some()
    }
}

pub fn gram(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<GramMatrix> {
    gram_with(spec, points, Execution::default())
}

/// Gram matrix with an explicit execution mode. Rows are computed
/// independently, so the result does not depend on `exec`.
pub fn gram_with(spec: &KernelSpec, points: &[Vec<f64>], exec: Execution) -> Result<GramMatrix> {
    spec.validate()?;
    check_points(points, "gram points")?;
    let n = points.len();
    let rows = par::map_indexed(exec, n, |i| {
        (0..n).map(|j| spec.eval_unchecked(&points[i], &points[j])).collect::<Vec<f64>>()
    });
    let entries = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Ok(GramMatrix { entries, points: points.to_vec(), spec: *spec })
}

/// Cross-kernel matrix `k(a_i, b_j)`.
pub fn cross_gram(spec: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let da = check_points(a, "cross gram left")?;
    let db = check_points(b, "cross gram right")?;
    check_dim(da, db)?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| spec.eval_unchecked(&a[i], &b[j])))
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Median pairwise Euclidean distance over a seeded subsample of at most
/// [`MEDIAN_SUBSAMPLE`] points.
///
/// When more than half the pairs coincide the median of the nonzero distances
/// is returned instead, so the result is positive whenever two points differ.
pub fn median_heuristic(points: &[Vec<f64>], seed: u64) -> Result<f64> {
    check_points(points, "median heuristic points")?;
    if points.len() < 2 {
        return Err(Error::Degenerate("median heuristic needs at least two points".into()));
    }
    let chosen: Vec<&Vec<f64>> = if points.len() > MEDIAN_SUBSAMPLE {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.shuffle(&mut rng::seeded(seed));
        idx.truncate(MEDIAN_SUBSAMPLE);
        idx.sort_unstable();
        idx.into_iter().map(|i| &points[i]).collect()
    } else {
        points.iter().collect()
    };
    let m = chosen.len();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            dists.push(euclidean(chosen[i], chosen[j]));
        }
    }
    let med = median_of(dists.clone());
    if med > 0.0 {
        return Ok(med);
    }
    let positive: Vec<f64> = dists.into_iter().filter(|d| *d > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::Degenerate("degenerate sample: all points identical".into()));
    }
    Ok(median_of(positive))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    /// V-statistic; never negative.
    Biased,
    /// U-statistic with the within-sample diagonals removed.
    Unbiased,
}

fn kernel_sum(spec: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>], skip_diagonal: bool) -> f64 {
    let mut total = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            total += spec.eval_unchecked(x, y);
        }
    }
    total
}

/// Squared maximum mean discrepancy between two samples.
pub fn mmd2(a: &[Vec<f64>], b: &[Vec<f64>], spec: &KernelSpec, estimator: MmdEstimator) -> Result<f64> {
    spec.validate()?;
    let da = check_points(a, "mmd sample A")?;
    let db = check_points(b, "mmd sample B")?;
    check_dim(da, db)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let cross = kernel_sum(spec, a, b, false) / (m * n);
    match estimator {
        MmdEstimator::Biased => {
            let aa = kernel_sum(spec, a, a, false) / (m * m);
            let bb = kernel_sum(spec, b, b, false) / (n * n);
            Ok((aa - 2.0 * cross + bb).max(0.0))
        }
        MmdEstimator::Unbiased => {
            if a.len() < 2 || b.len() < 2 {
                return Err(Error::InvalidParameter(
                    "unbiased mmd needs at least two points per sample".into(),
                ));
            }
            let aa = kernel_sum(spec, a, a, true) / (m * (m - 1.0));
            let bb = kernel_sum(spec, b, b, true) / (n * (n - 1.0));
            Ok(aa - 2.0 * cross + bb)
        }
    }
}

fn normalized(weights: &[f64], len: usize, what: &str) -> Result<Vec<f64>> {
    check_dim(len, weights.len())?;
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter(format!("{what} weights must be finite and nonnegative")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(format!("{what} weights sum to zero")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Biased squared MMD between two weighted samples; weights are normalized
/// to sum to one.
pub fn mmd2_weighted(
    a: &[Vec<f64>],
    wa: &[f64],
    b: &[Vec<f64>],
    wb: &[f64],
    spec: &KernelSpec,
) -> Result<f64> {
    spec.validate()?;
    let da = check_points(a, "weighted mmd sample A")?;
    let db = check_points(b, "weighted mmd sample B")?;
    check_dim(da, db)?;
    let wa = normalized(wa, a.len(), "sample A")?;
    let wb = normalized(wb, b.len(), "sample B")?;
    let weighted = |x: &[Vec<f64>], wx: &[f64], y: &[Vec<f64>], wy: &[f64]| {
        let mut total = 0.0;
        for (xi, wi) in x.iter().zip(wx) {
            if *wi == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for (yj, wj) in y.iter().zip(wy) {
                row += wj * spec.eval_unchecked(xi, yj);
            }
            total += wi * row;
        }
        total
    };
    let aa = weighted(a, &wa, a, &wa);
    let ab = weighted(a, &wa, b, &wb);
    let bb = weighted(b, &wb, b, &wb);
    Ok((aa - 2.0 * ab + bb).max(0.0))
}

/// Empirical kernel mean embedding of `sample` evaluated at `z`.
pub fn mean_embedding_eval(sample: &[Vec<f64>], spec: &KernelSpec, z: &[f64]) -> Result<f64> {
    spec.validate()?;
    let dim = check_points(sample, "embedding sample")?;
    check_dim(dim, z.len())?;
    check_finite(z, "embedding evaluation point")?;
    let total: f64 = sample.iter().map(|p| spec.eval_unchecked(p, z)).sum();
    Ok(total / sample.len() as f64)
}
