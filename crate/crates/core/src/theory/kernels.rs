//! Symmetric kernels `k(x, y)` implied by the test statistics, plus the
//! isotropic Gaussian used as a baseline.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{PointCloud, ReferenceSet};
use crate::error::{Error, Result};
use crate::kernel::affinity_block;
use crate::mmd::{SpecFilter, StatisticKind};

/// A positive semi-definite kernel on point clouds.
pub trait SymmetricKernel: Sync {
    fn name(&self) -> String;

    /// Explicit features `Φ` (one column per point) with `k(x, y) = φ(x)ᵀφ(y)`,
    /// when the kernel has a finite-dimensional representation.
    fn features(&self, pts: &PointCloud) -> Result<Option<DMatrix<f64>>>;

    /// `k(a_i, b_j)`, `a.len() × b.len()`.
    fn gram(&self, a: &PointCloud, b: &PointCloud) -> Result<DMatrix<f64>> {
        match (self.features(a)?, self.features(b)?) {
            (Some(fa), Some(fb)) => Ok(fa.transpose() * fb),
            _ => Err(Error::invalid(format!("kernel {} must override gram", self.name()))),
        }
    }

    /// Biased MMD² between two samples under this kernel.
    fn mmd2(&self, x: &PointCloud, y: &PointCloud) -> Result<f64> {
        if let (Some(fx), Some(fy)) = (self.features(x)?, self.features(y)?) {
            let mx = fx.column_mean();
            let my = fy.column_mean();
            return Ok((mx - my).norm_squared());
        }
        let kxx = self.gram(x, x)?.mean();
        let kyy = self.gram(y, y)?.mean();
        let kxy = self.gram(x, y)?.mean();
        Ok(kxx + kyy - 2.0 * kxy)
    }
}

/// `exp(−‖x − y‖² / (2ε²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub eps: f64,
}

impl SymmetricKernel for GaussianKernel {
    fn name(&self) -> String {
        format!("gaussian(eps={})", self.eps)
    }

    fn features(&self, _pts: &PointCloud) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }

    fn gram(&self, a: &PointCloud, b: &PointCloud) -> Result<DMatrix<f64>> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                found: b.dim(),
            });
        }
        let s = -0.5 / (self.eps * self.eps);
        let mut g = DMatrix::zeros(a.len(), b.len());
        g.as_mut_slice()
            .par_chunks_mut(a.len())
            .enumerate()
            .for_each(|(j, col)| {
                let y = b.point(j);
                for (i, v) in col.iter_mut().enumerate() {
                    let d2: f64 = a.point(i).iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                    *v = (s * d2).exp();
                }
            });
        Ok(g)
    }
}

/// `k_L2(x, y) = Σ_r w_r a(r, x) a(r, y)`, features `√w_r a(r, x)`.
#[derive(Debug, Clone)]
pub struct ReferenceKernel {
    pub refset: ReferenceSet,
}

impl SymmetricKernel for ReferenceKernel {
    fn name(&self) -> String {
        format!("k_L2(n_R={})", self.refset.len())
    }

    fn features(&self, pts: &PointCloud) -> Result<Option<DMatrix<f64>>> {
        let mut a = affinity_block(&self.refset, pts)?;
        let sw: Vec<f64> = self.refset.weights().iter().map(|w| w.sqrt()).collect();
        for mut col in a.column_iter_mut() {
            for (v, s) in col.iter_mut().zip(&sw) {
                *v *= s;
            }
        }
        Ok(Some(a))
    }
}

/// `k(x, y) = Σ_k f_k ψ_k(x) ψ_k(y)` where `ψ_k` are the right singular
/// functions of `a(r, x)` with respect to the reference weights and the
/// empirical measure of a base sample:
/// `ψ_k(x) = S_k⁻¹ Σ_r √w_r U_rk a(r, x)`, from the SVD
/// `diag(√w) A_base / √m = U S Vᵀ`.
#[derive(Debug, Clone)]
pub struct FilteredKernel {
    refset: ReferenceSet,
    /// `√f_k · U_k / S_k` scaled by `√w_r`, one row per mode.
    projection: DMatrix<f64>,
    singular_values: Vec<f64>,
    filter: Vec<f64>,
}

impl FilteredKernel {
    /// Singular values below this fraction of the largest are not used.
    const REL_TOL: f64 = 1e-10;

    pub fn new(refset: ReferenceSet, base: &PointCloud, filter: &SpecFilter) -> Result<Self> {
        let n_r = refset.len();
        let m = base.len() as f64;
        let mut a = affinity_block(&refset, base)?;
        let sw: Vec<f64> = refset.weights().iter().map(|w| w.sqrt()).collect();
        for mut col in a.column_iter_mut() {
            for (v, s) in col.iter_mut().zip(&sw) {
                *v *= s / m.sqrt();
            }
        }
        // Left singular vectors from the n_R × n_R Gram matrix.
        let gram = &a * a.transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n_r).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let usable: Vec<usize> = order
            .into_iter()
            .filter(|&i| eig.eigenvalues[i] > Self::REL_TOL * Self::REL_TOL * top.max(f64::MIN_POSITIVE))
            .collect();
        let s: Vec<f64> = usable.iter().map(|&i| eig.eigenvalues[i].sqrt()).collect();
        let f: Vec<f64> = match filter {
            SpecFilter::Weights(w) => w.as_slice().to_vec(),
            SpecFilter::Diffusion(step) => s.iter().map(|v| (v * v).powi(*step as i32 + 1)).collect(),
        };
        let modes = f.len().min(s.len());
        if modes < f.len() {
            log::warn!(
                "filtered kernel: only {} usable modes for a filter of length {}",
                modes,
                f.len()
            );
        }
        let mut projection = DMatrix::zeros(modes, n_r);
        for k in 0..modes {
            let col = eig.eigenvectors.column(usable[k]);
            let imax = col.iamax();
            let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
            let c = sign * f[k].sqrt() / s[k];
            for r in 0..n_r {
                projection[(k, r)] = c * sw[r] * col[r];
            }
        }
        Ok(Self {
            refset,
            projection,
            singular_values: s[..modes].to_vec(),
            filter: f[..modes].to_vec(),
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn filter(&self) -> &[f64] {
        &self.filter
    }
}

impl SymmetricKernel for FilteredKernel {
    fn name(&self) -> String {
        format!("k_spec(modes={})", self.filter.len())
    }

    fn features(&self, pts: &PointCloud) -> Result<Option<DMatrix<f64>>> {
        let a = affinity_block(&self.refset, pts)?;
        Ok(Some(&self.projection * a))
    }
}

/// `c · k(x, y)`.
pub struct Scaled<'a> {
    pub inner: &'a dyn SymmetricKernel,
    pub factor: f64,
}

impl SymmetricKernel for Scaled<'_> {
    fn name(&self) -> String {
        format!("{}x{}", self.factor, self.inner.name())
    }

    fn features(&self, pts: &PointCloud) -> Result<Option<DMatrix<f64>>> {
        Ok(self.inner.features(pts)?.map(|f| f * self.factor.sqrt()))
    }

    fn gram(&self, a: &PointCloud, b: &PointCloud) -> Result<DMatrix<f64>> {
        Ok(self.inner.gram(a, b)? * self.factor)
    }
}

/// The symmetric kernel behind a statistic: `k_L2` for L2, and the filtered
/// kernel built on `base` (a sample from the reference distribution) for Spec.
pub fn kernel_for(kind: &StatisticKind, refset: &ReferenceSet, base: &PointCloud) -> Result<Box<dyn SymmetricKernel>> {
    match kind {
        StatisticKind::L2 => Ok(Box::new(ReferenceKernel { refset: refset.clone() })),
        StatisticKind::Spec { filter, .. } => Ok(Box::new(FilteredKernel::new(refset.clone(), base, filter)?)),
    }
}
