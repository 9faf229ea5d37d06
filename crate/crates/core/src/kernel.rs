//! The asymmetric anisotropic affinity `a(r, x)` between reference points and
//! data, and its diffusion-tensor variant.
//!
//! Point kernels use `exp(-½ (x-r)ᵀ Σ_r⁻¹ (x-r))`. The tensor kernel keeps the
//! form used for diffusion MRI, `exp(-(γ_x-γ_r)ᵀ Σ_r⁺ (γ_x-γ_r))`, with no ½ and
//! a hard spatial window.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use crate::data::{PointCloud, ReferenceSet, SpdFactor};
use crate::error::{Error, Result};

const STACK_DIM: usize = 16;

#[inline]
fn affinity_unchecked(r: &[f64], cov: &SpdFactor, x: &[f64]) -> f64 {
    let d = r.len();
    if d <= STACK_DIM {
        let mut diff = [0.0; STACK_DIM];
        for k in 0..d {
            diff[k] = x[k] - r[k];
        }
        (-0.5 * cov.quad_form(&diff[..d])).exp()
    } else {
        let diff: Vec<f64> = x.iter().zip(r).map(|(a, b)| a - b).collect();
        (-0.5 * cov.quad_form(&diff)).exp()
    }
}

/// `a(r, x)` for a single reference point. Values lie in `(0, 1]` up to
/// floating-point underflow at extreme Mahalanobis distances.
pub fn eval_affinity(ref_point: &[f64], ref_cov: &SpdFactor, x: &[f64]) -> Result<f64> {
    let d = ref_cov.dim();
    for len in [ref_point.len(), x.len()] {
        if len != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: len,
            });
        }
    }
    Ok(affinity_unchecked(ref_point, ref_cov, x))
}

/// `n_R × m` block of affinities between every reference and every point.
/// Stored column-major, so each point's affinity profile is contiguous.
pub fn affinity_block(refset: &ReferenceSet, pts: &PointCloud) -> Result<DMatrix<f64>> {
    if pts.dim() != refset.dim() {
        return Err(Error::DimensionMismatch {
            expected: refset.dim(),
            found: pts.dim(),
        });
    }
    let n_r = refset.len();
    let mut out = DMatrix::zeros(n_r, pts.len());
    let refs = refset.points();
    let covs = refset.covariances();
    out.as_mut_slice().par_chunks_mut(n_r).enumerate().for_each(|(j, col)| {
        let x = pts.point(j);
        for (i, v) in col.iter_mut().enumerate() {
            *v = affinity_unchecked(refs.point(i), &covs[i], x);
        }
    });
    Ok(out)
}

/// The `n_R × (n₁ + n₂)` matrix `[A_X | A_Y]` together with the reference
/// measure it was built against.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    values: DMatrix<f64>,
    n1: usize,
    n2: usize,
    weights: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(values: DMatrix<f64>, n1: usize, n2: usize, weights: Vec<f64>) -> Result<Self> {
        if values.ncols() != n1 + n2 {
            return Err(Error::DimensionMismatch {
                expected: n1 + n2,
                found: values.ncols(),
            });
        }
        if weights.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                expected: values.nrows(),
                found: weights.len(),
            });
        }
        if n1 == 0 {
            return Err(Error::EmptyBlock("X"));
        }
        if n2 == 0 {
            return Err(Error::EmptyBlock("Y"));
        }
        Ok(Self {
            values,
            n1,
            n2,
            weights,
        })
    }

    /// Uniform reference weights.
    pub fn uniform(values: DMatrix<f64>, n1: usize, n2: usize) -> Result<Self> {
        let n_r = values.nrows();
        Self::new(values, n1, n2, vec![1.0 / n_r as f64; n_r])
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_refs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Column `j` (affinities of point `j` to all references).
    pub fn column(&self, j: usize) -> &[f64] {
        let n_r = self.n_refs();
        &self.values.as_slice()[j * n_r..(j + 1) * n_r]
    }

    /// Same matrix with the blocks exchanged, `[A_Y | A_X]`.
    pub fn swapped(&self) -> Self {
        let n_r = self.n_refs();
        let mut values = DMatrix::zeros(n_r, self.n());
        values
            .columns_mut(0, self.n2)
            .copy_from(&self.values.columns(self.n1, self.n2));
        values
            .columns_mut(self.n2, self.n1)
            .copy_from(&self.values.columns(0, self.n1));
        Self {
            values,
            n1: self.n2,
            n2: self.n1,
            weights: self.weights.clone(),
        }
    }
}

/// Assemble `[A_X | A_Y]` with X columns first. Output does not depend on the
/// size of the worker pool.
pub fn build_affinity_matrix(refset: &ReferenceSet, x: &PointCloud, y: &PointCloud) -> Result<AffinityMatrix> {
    let pooled = x.concat(y)?;
    let values = affinity_block(refset, &pooled)?;
    AffinityMatrix::new(values, x.len(), y.len(), refset.weights().to_vec())
}

/// One voxel of a diffusion-tensor image.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTensorPixel {
    pub location: Vec<f64>,
    pub tensor: Matrix3<f64>,
}

/// Isometric embedding of a symmetric 3×3 tensor:
/// `(T₁₁, T₂₂, T₃₃, √2T₁₂, √2T₁₃, √2T₂₃)`.
pub fn vectorize_tensor(t: &Matrix3<f64>) -> Result<[f64; 6]> {
    let asym = (t - t.transpose()).amax();
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let s = std::f64::consts::SQRT_2;
    Ok([
        t[(0, 0)],
        t[(1, 1)],
        t[(2, 2)],
        s * t[(0, 1)],
        s * t[(0, 2)],
        s * t[(1, 2)],
    ])
}

/// Tensor affinity between a reference voxel and another voxel; exactly zero
/// once the voxels are `locality_eps` or further apart.
pub fn eval_tensor_affinity(
    reference: &DiffusionTensorPixel,
    ref_cov6: &SpdFactor,
    pixel: &DiffusionTensorPixel,
    locality_eps: f64,
) -> Result<f64> {
    if ref_cov6.dim() != 6 {
        return Err(Error::DimensionMismatch {
            expected: 6,
            found: ref_cov6.dim(),
        });
    }
    if reference.location.len() != pixel.location.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.location.len(),
            found: pixel.location.len(),
        });
    }
    if !(locality_eps > 0.0) {
        return Err(Error::invalid("locality_eps must be positive"));
    }
    let dist2: f64 = reference
        .location
        .iter()
        .zip(&pixel.location)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if dist2 >= locality_eps * locality_eps {
        return Ok(0.0);
    }
    let gr = vectorize_tensor(&reference.tensor)?;
    let gx = vectorize_tensor(&pixel.tensor)?;
    let diff: Vec<f64> = gx.iter().zip(&gr).map(|(a, b)| a - b).collect();
    Ok((-ref_cov6.quad_form(&diff)).exp())
}

/// 6×6 covariance of tensor vectors around voxel `center`, from all voxels
/// within spatial `radius`: second moment about the center's own vector,
/// eigenvalues floored at `reg_floor`.
pub fn estimate_tensor_covariance(
    pixels: &[DiffusionTensorPixel],
    center: usize,
    radius: f64,
    reg_floor: f64,
) -> Result<SpdFactor> {
    let c = pixels
        .get(center)
        .ok_or_else(|| Error::invalid(format!("voxel index {center} out of range")))?;
    let gc = vectorize_tensor(&c.tensor)?;
    let mut m = DMatrix::<f64>::zeros(6, 6);
    let mut count = 0usize;
    for p in pixels {
        let dist2: f64 = p.location.iter().zip(&c.location).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 > radius * radius {
            continue;
        }
        let g = vectorize_tensor(&p.tensor)?;
        let v = nalgebra::DVector::from_iterator(6, g.iter().zip(&gc).map(|(a, b)| a - b));
        m += &v * v.transpose();
        count += 1;
    }
    m /= count.max(1) as f64;
    SpdFactor::from_symmetric(&m, reg_floor)
}
