//! Core value types shared by every stage of the pipeline.

mod io;
mod rng;

pub use io::{
    load_point_cloud, load_reference_set, load_result, read_matrix_csv, save_reference_set, save_result,
    write_matrix_csv, CsvOptions,
};
pub use rng::{derive_stream, RngStream};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n × d` cloud of sample coordinates, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl PointCloud {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "point cloud needs n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), d)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = m.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(m.row(i).iter().copied());
        }
        Self::new(data, n, d)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.data)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &PointCloud) -> Result<PointCloud> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: other.d,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(PointCloud {
            data,
            n: self.n + other.n,
            d: self.d,
        })
    }

    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        PointCloud::new(data, indices.len(), self.d)
    }

    /// Apply `f` to every point, producing a cloud of the same shape.
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> PointCloud {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(self.d).zip(data.chunks_exact_mut(self.d)) {
            f(src, dst);
        }
        PointCloud {
            data,
            n: self.n,
            d: self.d,
        }
    }
}

/// Eigen-factorized symmetric positive definite matrix `Σ = Q diag(λ) Qᵀ`.
///
/// Eigenvalues are floored at construction, so `Σ⁻¹` is a rotation followed
/// by a diagonal scale. The whitening map `Λ^{-1/2} Qᵀ` is cached row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactor {
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    whitening: Vec<f64>,
}

impl SpdFactor {
    /// Factorize a symmetric matrix, raising every eigenvalue to at least `floor`.
    pub fn from_symmetric(m: &DMatrix<f64>, floor: f64) -> Result<Self> {
        let (r, c) = m.shape();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, found: c });
        }
        if !(floor > 0.0) {
            return Err(Error::invalid("eigenvalue floor must be positive"));
        }
        let asym = (m - m.transpose()).amax();
        let scale = m.amax().max(1.0);
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance contains non-finite entries"));
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        // Sort descending so the factorization is canonical.
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigvals = DVector::from_iterator(r, order.iter().map(|&i| eig.eigenvalues[i].max(floor)));
        let eigvecs = DMatrix::from_fn(r, r, |row, col| eig.eigenvectors[(row, order[col])]);
        Ok(Self::from_parts(eigvecs, eigvals))
    }

    /// Build from an orthonormal eigenbasis (columns) and positive eigenvalues.
    pub fn from_eigen(eigvecs: DMatrix<f64>, eigvals: DVector<f64>) -> Result<Self> {
        let d = eigvals.len();
        if eigvecs.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: eigvecs.nrows(),
            });
        }
        if eigvals.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid("eigenvalues must be positive and finite"));
        }
        let gram = eigvecs.transpose() * &eigvecs;
        if (gram - DMatrix::identity(d, d)).amax() > 1e-8 {
            return Err(Error::invalid("eigenvector basis is not orthonormal"));
        }
        Ok(Self::from_parts(eigvecs, eigvals))
    }

    pub fn identity(d: usize) -> Self {
        Self::from_parts(DMatrix::identity(d, d), DVector::from_element(d, 1.0))
    }

    /// `σ² I`.
    pub fn isotropic(d: usize, variance: f64) -> Result<Self> {
        Self::from_eigen(DMatrix::identity(d, d), DVector::from_element(d, variance))
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        let d = variances.len();
        Self::from_eigen(DMatrix::identity(d, d), DVector::from_column_slice(variances))
    }

    fn from_parts(eigvecs: DMatrix<f64>, eigvals: DVector<f64>) -> Self {
        let d = eigvals.len();
        let mut whitening = vec![0.0; d * d];
        for k in 0..d {
            let s = eigvals[k].sqrt().recip();
            for j in 0..d {
                whitening[k * d + j] = eigvecs[(j, k)] * s;
            }
        }
        Self {
            eigvecs,
            eigvals,
            whitening,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Reconstructed covariance matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let scaled = &self.eigvecs * DMatrix::from_diagonal(&self.eigvals);
        let m = scaled * self.eigvecs.transpose();
        (&m + m.transpose()) * 0.5
    }

    /// `vᵀ Σ⁻¹ v`; caller guarantees `v.len() == dim()`.
    #[inline]
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let d = v.len();
        let mut acc = 0.0;
        for row in self.whitening.chunks_exact(d) {
            let z: f64 = row.iter().zip(v).map(|(w, x)| w * x).sum();
            acc += z * z;
        }
        acc
    }

    /// Covariance scaled by `c` (all eigenvalues times `c`).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_eigen(self.eigvecs.clone(), &self.eigvals * c)
    }
}

/// Landmark points with per-point covariances and a discrete measure over them.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    points: PointCloud,
    covariances: Vec<SpdFactor>,
    weights: Vec<f64>,
}

impl ReferenceSet {
    pub fn new(points: PointCloud, covariances: Vec<SpdFactor>, weights: Vec<f64>) -> Result<Self> {
        let n_r = points.len();
        if covariances.len() != n_r {
            return Err(Error::DimensionMismatch {
                expected: n_r,
                found: covariances.len(),
            });
        }
        if weights.len() != n_r {
            return Err(Error::DimensionMismatch {
                expected: n_r,
                found: weights.len(),
            });
        }
        if let Some(c) = covariances.iter().find(|c| c.dim() != points.dim()) {
            return Err(Error::DimensionMismatch {
                expected: points.dim(),
                found: c.dim(),
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("reference weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("reference weights sum to {total}, expected 1")));
        }
        Ok(Self {
            points,
            covariances,
            weights,
        })
    }

    /// Reference set with the uniform measure `1/n_R`.
    pub fn uniform(points: PointCloud, covariances: Vec<SpdFactor>) -> Result<Self> {
        let n_r = points.len();
        Self::new(points, covariances, vec![1.0 / n_r as f64; n_r])
    }

    /// Same covariance `Σ` at every reference point.
    pub fn with_shared_covariance(points: PointCloud, cov: SpdFactor) -> Result<Self> {
        let covs = vec![cov; points.len()];
        Self::uniform(points, covs)
    }

    /// Normalize arbitrary nonnegative masses into weights.
    pub fn with_masses(points: PointCloud, covariances: Vec<SpdFactor>, masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("reference masses must have positive total"));
        }
        let mut weights: Vec<f64> = masses.iter().map(|m| m / total).collect();
        // Fold the rounding residue into the largest weight.
        let residue = 1.0 - weights.iter().sum::<f64>();
        if let Some(imax) = (0..weights.len()).max_by(|&a, &b| weights[a].total_cmp(&weights[b])) {
            weights[imax] += residue;
        }
        Self::new(points, covariances, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn covariances(&self) -> &[SpdFactor] {
        &self.covariances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| (w - u).abs() <= 1e-15)
    }

    /// Every covariance multiplied by `c`; `c = σ̃²` rescales the field.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        let covs = self
            .covariances
            .iter()
            .map(|s| s.scaled(c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.points.clone(), covs, self.weights.clone())
    }
}

/// Outcome of one permutation two-sample test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    #[serde(rename = "threshold")]
    pub threshold_t_alpha: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub null_samples: Vec<f64>,
}
