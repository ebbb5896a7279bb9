//! Null-centered covariance estimation, shrinkage toward structured targets,
//! and triangular factorization for Gaussian sampling.
//!
//! Under missingness every entry is estimated from the replicates in which
//! both coordinates are observed (pairwise-complete), divided by that count.
//! The mean is fixed by the null hypothesis, so there is no degrees-of-freedom
//! correction.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{center, TriangularSample};
use crate::stats::{column_counts, NormalizerKind};

/// Relative eigenvalue floor used when repairing an indefinite matrix.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    dim: usize,
    entries: Vec<f64>,
    support: Vec<usize>,
}

impl CovMatrix {
    /// Builds a matrix from row-major entries; every entry counts as supported.
    pub fn from_dense(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        let m = CovMatrix {
            dim,
            entries,
            support: vec![1; dim * dim],
        };
        m.check_symmetric(0.0)?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(config_err("covariance rows must form a square matrix"));
        }
        Self::from_dense(dim, rows.concat())
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::scaled_identity(dim, 0.0)
    }

    fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = s;
        }
        CovMatrix {
            dim,
            entries,
            support: vec![1; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.entries[u * self.dim + v]
    }

    /// Number of replicates supporting entry `(u, v)`.
    pub fn support(&self, u: usize, v: usize) -> usize {
        self.support[u * self.dim + v]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }

    fn with_entries(&self, entries: Vec<f64>) -> Self {
        CovMatrix {
            dim: self.dim,
            entries,
            support: self.support.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.with_entries(self.entries.iter().map(|x| x * s).collect())
    }

    /// Embeds the matrix in the top-left corner of a larger zero matrix.
    pub fn padded(&self, dim: usize) -> Self {
        if dim <= self.dim {
            return self.clone();
        }
        let mut entries = vec![0.0; dim * dim];
        let mut support = vec![0; dim * dim];
        for u in 0..self.dim {
            for v in 0..self.dim {
                entries[u * dim + v] = self.get(u, v);
                support[u * dim + v] = self.support(u, v);
            }
        }
        CovMatrix { dim, entries, support }
    }

    /// Entrywise sum; supports add up.
    pub fn add(&self, other: &CovMatrix) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(CovMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
            support: self.support.iter().zip(&other.support).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn check_symmetric(&self, rel_tol: f64) -> Result<()> {
        for u in 0..self.dim {
            for v in 0..u {
                let (a, b) = (self.get(u, v), self.get(v, u));
                let diff = (a - b).abs();
                if diff > rel_tol * a.abs().max(b.abs()) || diff.is_nan() {
                    return Err(Error::NotSymmetric { row: u, col: v, diff });
                }
            }
        }
        Ok(())
    }

    pub fn frobenius(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkageTarget {
    ScaledIdentity,
    Diagonal,
    #[default]
    CompoundSymmetric,
    #[serde(rename = "heterogeneous-cs")]
    HeterogeneousCS,
    Explicit(CovMatrix),
}

impl fmt::Display for ShrinkageTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShrinkageTarget::ScaledIdentity => "identity",
            ShrinkageTarget::Diagonal => "diag",
            ShrinkageTarget::CompoundSymmetric => "cs",
            ShrinkageTarget::HeterogeneousCS => "hcs",
            ShrinkageTarget::Explicit(_) => "explicit",
        })
    }
}

impl FromStr for ShrinkageTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(ShrinkageTarget::ScaledIdentity),
            "diag" => Ok(ShrinkageTarget::Diagonal),
            "cs" => Ok(ShrinkageTarget::CompoundSymmetric),
            "hcs" => Ok(ShrinkageTarget::HeterogeneousCS),
            other => Err(config_err(format!("unknown shrinkage target '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrinkageResult {
    pub matrix: CovMatrix,
    pub lambda: f64,
    pub target_used: ShrinkageTarget,
}

/// Dense centered values (zero where unobserved) and the observed mask.
fn centered_grid(sample: &TriangularSample, null_mean: &[f64]) -> (Vec<f64>, Vec<bool>, usize) {
    let dim = sample.max_dim();
    let centered = center(sample, null_mean);
    let mut values = vec![0.0; sample.n() * dim];
    let mut mask = vec![false; sample.n() * dim];
    for (i, row) in centered.rows().iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if cell.observed {
                values[i * dim + j] = cell.value;
                mask[i * dim + j] = true;
            }
        }
    }
    (values, mask, dim)
}

/// Pairwise-complete second moments about `null_mean`.
pub fn sample_cov_null(sample: &TriangularSample, null_mean: &[f64]) -> CovMatrix {
    let (values, mask, dim) = centered_grid(sample, null_mean);
    let mut sums = vec![0.0; dim * dim];
    let mut support = vec![0usize; dim * dim];
    let mut idx = Vec::with_capacity(dim);
    for i in 0..sample.n() {
        let row = &values[i * dim..(i + 1) * dim];
        idx.clear();
        idx.extend((0..dim).filter(|&j| mask[i * dim + j]));
        for (a, &u) in idx.iter().enumerate() {
            let xu = row[u];
            for &v in &idx[a..] {
                sums[u * dim + v] += xu * row[v];
                support[u * dim + v] += 1;
            }
        }
    }
    let mut entries = vec![0.0; dim * dim];
    for u in 0..dim {
        for v in u..dim {
            let m = support[u * dim + v];
            let e = if m == 0 { 0.0 } else { sums[u * dim + v] / m as f64 };
            entries[u * dim + v] = e;
            entries[v * dim + u] = e;
            support[v * dim + u] = m;
        }
    }
    CovMatrix { dim, entries, support }
}

fn mean_supported_off_diagonal(sigma: &CovMatrix, f: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for u in 0..sigma.dim {
        for v in (u + 1)..sigma.dim {
            if sigma.support(u, v) > 0 {
                total += f(u, v);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Structured estimate of `sigma_hat` for the given target family.
pub fn target_estimate(sigma_hat: &CovMatrix, target: &ShrinkageTarget) -> Result<CovMatrix> {
    let dim = sigma_hat.dim;
    let diag = sigma_hat.diagonal();
    let mean_diag = if dim == 0 {
        0.0
    } else {
        diag.iter().sum::<f64>() / dim as f64
    };
    let mut entries = vec![0.0; dim * dim];
    match target {
        ShrinkageTarget::ScaledIdentity => {
            for i in 0..dim {
                entries[i * dim + i] = mean_diag;
            }
        }
        ShrinkageTarget::Diagonal => {
            for i in 0..dim {
                entries[i * dim + i] = diag[i];
            }
        }
        ShrinkageTarget::CompoundSymmetric => {
            let off = mean_supported_off_diagonal(sigma_hat, |u, v| sigma_hat.get(u, v));
            for u in 0..dim {
                for v in 0..dim {
                    entries[u * dim + v] = if u == v { mean_diag } else { off };
                }
            }
        }
        ShrinkageTarget::HeterogeneousCS => {
            if let Some(j) = diag.iter().position(|d| !(*d > 0.0)) {
                return Err(Error::ZeroVariance(j));
            }
            let r_bar = mean_supported_off_diagonal(sigma_hat, |u, v| sigma_hat.get(u, v) / (diag[u] * diag[v]).sqrt());
            for u in 0..dim {
                for v in 0..dim {
                    entries[u * dim + v] = if u == v {
                        diag[u]
                    } else {
                        r_bar * (diag[u] * diag[v]).sqrt()
                    };
                }
            }
        }
        ShrinkageTarget::Explicit(m) => {
            if m.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.dim,
                });
            }
            return Ok(m.clone());
        }
    }
    Ok(sigma_hat.with_entries(entries))
}

/// Closed-form shrinkage weight
/// `sum Var(s_uv) / sum (s_uv - t_uv)^2`, clamped to `[0, 1]`.
///
/// `Var(s_uv)` is the sample variance of the per-replicate cross-products
/// divided by the pairwise count. Entries where the target reproduces
/// `sigma_hat` exactly are left out of both sums, since shrinking them is a
/// no-op. A zero denominator gives 1.
pub fn estimate_lambda(
    sample: &TriangularSample,
    null_mean: &[f64],
    sigma_hat: &CovMatrix,
    target: &CovMatrix,
) -> Result<f64> {
    if sample.n() < 2 {
        return Err(Error::TooFewReplicates {
            what: "shrinkage weight estimation",
            needed: 2,
            found: sample.n(),
        });
    }
    let (values, mask, dim) = centered_grid(sample, null_mean);
    if sigma_hat.dim != dim || target.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: if sigma_hat.dim != dim {
                sigma_hat.dim
            } else {
                target.dim
            },
        });
    }
    let n = sample.n();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for u in 0..dim {
        for v in u..dim {
            let s = sigma_hat.get(u, v);
            let t = target.get(u, v);
            if s == t {
                continue;
            }
            let weight = if u == v { 1.0 } else { 2.0 };
            denominator += weight * (s - t) * (s - t);

            let m = sigma_hat.support(u, v);
            if m < 2 {
                continue;
            }
            let mut ss = 0.0;
            for i in 0..n {
                if mask[i * dim + u] && mask[i * dim + v] {
                    let w = values[i * dim + u] * values[i * dim + v];
                    ss += (w - s) * (w - s);
                }
            }
            let m = m as f64;
            numerator += weight * ss / ((m - 1.0) * m);
        }
    }
    if denominator == 0.0 {
        return Ok(1.0);
    }
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// `(1 - lambda) sigma_hat + lambda target`, entrywise.
pub fn shrink(sigma_hat: &CovMatrix, target: &CovMatrix, lambda: f64) -> Result<CovMatrix> {
    if sigma_hat.dim != target.dim {
        return Err(Error::DimensionMismatch {
            expected: sigma_hat.dim,
            found: target.dim,
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(config_err(format!("shrinkage weight {lambda} outside [0, 1]")));
    }
    Ok(sigma_hat.with_entries(
        sigma_hat
            .entries
            .iter()
            .zip(&target.entries)
            .map(|(s, t)| (1.0 - lambda) * s + lambda * t)
            .collect(),
    ))
}

/// Full pipeline: null-centered estimate, structured target, weight, blend.
pub fn shrinkage_estimate(
    sample: &TriangularSample,
    null_mean: &[f64],
    target: &ShrinkageTarget,
    lambda: Option<f64>,
) -> Result<ShrinkageResult> {
    let sigma_hat = sample_cov_null(sample, null_mean);
    let target_matrix = target_estimate(&sigma_hat, target)?;
    let lambda = match lambda {
        Some(l) => l,
        None => estimate_lambda(sample, null_mean, &sigma_hat, &target_matrix)?,
    };
    Ok(ShrinkageResult {
        matrix: shrink(&sigma_hat, &target_matrix, lambda)?,
        lambda,
        target_used: target.clone(),
    })
}

/// Rescales a per-replicate covariance into the covariance of the normalized
/// sum. Entry `(u, v)` picks up `m_uv / sqrt(V_u V_v)` for column-wise
/// normalizers and `m_uv / n` for `sqrt(n)`; both are exactly 1 on complete
/// data.
pub fn normalized_sum_covariance(
    sigma: &CovMatrix,
    sample: &TriangularSample,
    normalizer: NormalizerKind,
) -> CovMatrix {
    let dim = sigma.dim;
    let counts = column_counts(sample);
    let joint = joint_counts(sample);
    let n = sample.n() as f64;
    let mut entries = sigma.entries.clone();
    for u in 0..dim {
        for v in 0..dim {
            let m = joint[u * dim + v] as f64;
            let w = match normalizer {
                NormalizerKind::RandomColumnwise => m / ((counts.get(u) as f64) * (counts.get(v) as f64)).sqrt(),
                NormalizerKind::SqrtN => m / n,
            };
            if w != 1.0 {
                entries[u * dim + v] *= w;
            }
        }
    }
    sigma.with_entries(entries)
}

fn joint_counts(sample: &TriangularSample) -> Vec<usize> {
    let dim = sample.max_dim();
    let mut counts = vec![0usize; dim * dim];
    let mut idx = Vec::with_capacity(dim);
    for row in sample.rows() {
        idx.clear();
        idx.extend(row.iter().enumerate().filter(|(_, c)| c.observed).map(|(j, _)| j));
        for &u in &idx {
            for &v in &idx {
                counts[u * dim + v] += 1;
            }
        }
    }
    counts
}

/// Lower-triangular factor `L` with `L L^T = Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    dim: usize,
    lower: Vec<f64>,
    /// True when eigenvalue flooring was needed.
    pub repaired: bool,
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// `out = L z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.lower[i * d..i * d + i + 1];
            *o = row.iter().zip(z).map(|(l, z)| l * z).sum();
        }
    }

    /// `L L^T` as a dense row-major matrix.
    pub fn product(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
        out
    }
}

/// Strict Cholesky on a row-major matrix; `None` unless positive definite.
pub fn cholesky_lower(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Some(l)
}

/// Cholesky that tolerates zero pivots of a positive semidefinite matrix by
/// zeroing the corresponding column.
fn cholesky_semidefinite(a: &[f64], dim: usize) -> Vec<f64> {
    let scale = (0..dim).map(|i| a[i * dim + i].abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                l[i * dim + i] = if s > tol { s.sqrt() } else { 0.0 };
            } else if l[j * dim + j] > 0.0 {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    l
}

/// Factorizes `sigma`. If the strict decomposition fails, eigenvalues are
/// floored at `EIGEN_FLOOR * max_eigenvalue` and the repaired matrix is
/// factorized instead, with `repaired` set.
pub fn factorize(sigma: &CovMatrix) -> Result<Factor> {
    sigma.check_symmetric(1e-12)?;
    let dim = sigma.dim;
    if let Some(lower) = cholesky_lower(&sigma.entries, dim) {
        return Ok(Factor {
            dim,
            lower,
            repaired: false,
        });
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &sigma.entries));
    if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::Factorization);
    }
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = EIGEN_FLOOR * max_eig;
    let floored = eig.eigenvalues.map(|x| x.max(floor));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    let mut dense = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let v = 0.5 * (repaired[(i, j)] + repaired[(j, i)]);
            dense[i * dim + j] = v;
            dense[j * dim + i] = v;
        }
    }
    let lower = cholesky_lower(&dense, dim).unwrap_or_else(|| cholesky_semidefinite(&dense, dim));
    if lower.iter().any(|x| !x.is_finite()) {
        return Err(Error::Factorization);
    }
    Ok(Factor {
        dim,
        lower,
        repaired: true,
    })
}
