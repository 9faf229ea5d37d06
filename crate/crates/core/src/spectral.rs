//! Thin SVD of the affinity matrix and the spectral filters applied to it.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::data::{read_matrix_csv, write_matrix_csv, CsvOptions};
use crate::error::{Error, Result};

/// Singular values below `DROP_TOL · S₁` are treated as numerically zero.
pub const DROP_TOL: f64 = 1e-12;

/// Rank-`r_f` factorization `A ≈ U diag(S) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdTriple {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }
}

/// Best rank-`r_f` approximation of `a` in Frobenius norm.
///
/// Columns are ordered by decreasing singular value; each `U` column has its
/// largest-magnitude entry positive. Modes with `S_k < 1e-12 · S₁` are
/// dropped (with a warning), so the returned rank may be below `r_f`.
pub fn truncated_svd(a: &DMatrix<f64>, r_f: usize) -> Result<SvdTriple> {
    let (rows, cols) = a.shape();
    let max_rank = rows.min(cols);
    if r_f == 0 || r_f > max_rank {
        return Err(Error::invalid(format!("rank {r_f} out of range 1..={max_rank}")));
    }
    // Factor through the thin side: for wide A work with Aᵀ so the
    // decomposition runs on a tall matrix.
    let wide = cols > rows;
    let svd = if wide {
        a.transpose().svd(true, true)
    } else {
        a.clone().svd(true, true)
    };
    let (left, right) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ").transpose());
    let (u_full, v_full) = if wide { (right, left) } else { (left, right) };
    let s_full = svd.singular_values;

    let mut order: Vec<usize> = (0..s_full.len()).collect();
    order.sort_by(|&i, &j| s_full[j].total_cmp(&s_full[i]));
    let s_max = s_full[order[0]];
    let mut keep: Vec<usize> = order.into_iter().take(r_f).collect();
    let before = keep.len();
    keep.retain(|&k| s_full[k] > DROP_TOL * s_max && s_full[k] > 0.0);
    if keep.len() < before {
        warn!(
            "truncated_svd: dropped {} numerically-zero modes, rank {} -> {}",
            before - keep.len(),
            before,
            keep.len()
        );
    }
    if keep.is_empty() {
        return Err(Error::invalid("matrix is numerically zero"));
    }

    let r = keep.len();
    let mut u = DMatrix::zeros(rows, r);
    let mut v = DMatrix::zeros(cols, r);
    let mut s = DVector::zeros(r);
    for (c, &k) in keep.iter().enumerate() {
        let col = u_full.column(k);
        let imax = col.iamax();
        let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
        u.set_column(c, &(col * sign));
        v.set_column(c, &(v_full.column(k) * sign));
        s[c] = s_full[k];
    }
    Ok(SvdTriple { u, s, v })
}

/// Nonnegative weights `f_1..f_{r_f}` on the spectral modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter(Vec<f64>);

impl SpectralFilter {
    pub fn new(f: Vec<f64>) -> Result<Self> {
        if f.is_empty() {
            return Err(Error::invalid("filter is empty"));
        }
        if f.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("filter entries must be finite and nonnegative"));
        }
        if !f.iter().any(|&v| v > 0.0) {
            return Err(Error::invalid("filter has no positive entry"));
        }
        Ok(Self(f))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Keep the first `k` entries.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        Self::new(self.0[..k.min(self.0.len())].to_vec())
    }

    /// Single-column CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let (data, _, d) = read_matrix_csv(path, CsvOptions::default())?;
        if d != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: d });
        }
        Self::new(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, None, self.0.iter().map(std::slice::from_ref))
    }
}

/// `f_k = (S_k² / n_R)^{m+1}`: `m` steps of diffusion over the reference set.
/// `m = 0` gives the weights under which the filtered statistic equals the
/// plain L2 statistic.
pub fn diffusion_filter(s: &[f64], m: u32, n_r: usize) -> Result<SpectralFilter> {
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("singular values must be positive"));
    }
    let n = n_r as f64;
    SpectralFilter::new(s.iter().map(|&v| (v * v / n).powi(m as i32 + 1)).collect())
}

/// Flat pass band on `1..=r_pass`, raised-cosine taper to zero at `r_cut`.
pub fn bandpass_filter(r_pass: usize, r_cut: usize) -> Result<SpectralFilter> {
    if r_pass == 0 || r_pass > r_cut {
        return Err(Error::invalid(format!(
            "bandpass needs 1 <= r_pass <= r_cut, got ({r_pass}, {r_cut})"
        )));
    }
    let f = (1..=r_cut)
        .map(|k| {
            if k <= r_pass {
                1.0
            } else {
                let t = (k - r_pass) as f64 / (r_cut - r_pass) as f64;
                (std::f64::consts::FRAC_PI_2 * t).cos().powi(2)
            }
        })
        .collect();
    SpectralFilter::new(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::derive_stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = derive_stream(seed, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    fn orthonormal_err(m: &DMatrix<f64>) -> f64 {
        (m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).amax()
    }

    #[test]
    fn rank_one_exact() {
        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let v = DVector::from_vec(vec![3.0, 0.0, 4.0, 0.0]);
        let a = &u * v.transpose();
        let t = truncated_svd(&a, 1).unwrap();
        assert!((t.s[0] - 15.0).abs() < 1e-12);
        assert!((t.reconstruct() - &a).norm() < 1e-12);
    }

    #[test]
    fn identity_eckart_young() {
        let mut a = DMatrix::zeros(3, 5);
        for i in 0..3 {
            a[(i, i)] = 1.0;
        }
        let t = truncated_svd(&a, 2).unwrap();
        assert!((t.s[0] - 1.0).abs() < 1e-14 && (t.s[1] - 1.0).abs() < 1e-14);
        let err2 = (t.reconstruct() - &a).norm_squared();
        assert!((err2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction() {
        let a = random(10, 40, 1);
        let t = truncated_svd(&a, 10).unwrap();
        assert!((t.reconstruct() - &a).norm() < 1e-10);
        assert!(orthonormal_err(&t.u) < 1e-8);
        assert!(orthonormal_err(&t.v) < 1e-8);
        assert!(t.s.iter().zip(t.s.iter().skip(1)).all(|(a, b)| a >= b));
        for c in 0..t.rank() {
            let col = t.u.column(c);
            assert!(col[col.iamax()] > 0.0);
        }
    }

    #[test]
    fn tall_input_works() {
        let a = random(30, 6, 2);
        let t = truncated_svd(&a, 6).unwrap();
        assert!((t.reconstruct() - &a).norm() < 1e-10);
    }

    #[test]
    fn reconstruction_error_nonincreasing_in_rank() {
        let a = random(8, 20, 3);
        let errs: Vec<f64> = (1..=8)
            .map(|r| (truncated_svd(&a, r).unwrap().reconstruct() - &a).norm())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{errs:?}");
    }

    #[test]
    fn rank_out_of_range() {
        let a = random(3, 4, 4);
        assert!(truncated_svd(&a, 0).is_err());
        assert!(truncated_svd(&a, 4).is_err());
    }

    #[test]
    fn degenerate_modes_dropped() {
        let u = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &u * v.transpose();
        let t = truncated_svd(&a, 3).unwrap();
        assert_eq!(t.rank(), 1);
    }

    #[test]
    fn diffusion_examples() {
        assert_eq!(diffusion_filter(&[2.0, 1.0], 0, 4).unwrap().as_slice(), &[1.0, 0.25]);
        assert_eq!(diffusion_filter(&[2.0, 1.0], 1, 4).unwrap().as_slice(), &[1.0, 0.0625]);
    }

    #[test]
    fn bandpass_examples() {
        let f = bandpass_filter(10, 20).unwrap();
        assert_eq!(f.len(), 20);
        assert!(f.as_slice()[..10].iter().all(|&v| v == 1.0));
        assert!(f.as_slice()[19] < 1e-30);
        assert!(f.as_slice()[9..].windows(2).all(|w| w[1] < w[0]));

        assert_eq!(bandpass_filter(1, 1).unwrap().as_slice(), &[1.0]);

        let g = bandpass_filter(2, 4).unwrap();
        let g = g.as_slice();
        assert_eq!(&g[..2], &[1.0, 1.0]);
        assert!((g[2] - 0.5).abs() < 1e-15);
        assert!(g[3] < 1e-30);
        assert!(bandpass_filter(3, 2).is_err());
        assert!(bandpass_filter(0, 2).is_err());
    }

    #[test]
    fn filter_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let f = bandpass_filter(3, 7).unwrap();
        f.save(&p).unwrap();
        assert_eq!(SpectralFilter::load(&p).unwrap(), f);
    }

    proptest! {
        #[test]
        fn diffusion_steps_shrink_weights(s in prop::collection::vec(0.01f64..1.0, 1..12), m in 0u32..5) {
            // Base S²/n_R ≤ 1 when every S_k ≤ √n_R.
            let a = diffusion_filter(&s, m, 1).unwrap();
            let b = diffusion_filter(&s, m + 1, 1).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!(y <= x);
                prop_assert!(y.is_finite() && *y >= 0.0);
            }
        }

        #[test]
        fn bandpass_nonnegative(r_pass in 1usize..30, extra in 0usize..30) {
            let f = bandpass_filter(r_pass, r_pass + extra).unwrap();
            prop_assert!(f.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
        }
    }
}
