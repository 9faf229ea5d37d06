//! Empirical witness functions: where, and in which direction, X and Y differ.

use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::data::{write_matrix_csv, PointCloud, ReferenceSet};
use crate::error::{Error, Result};
use crate::kernel::{affinity_block, build_affinity_matrix, AffinityMatrix};
use crate::mmd::{histograms, resolve_filter, spectral_decomposition, spectral_means, StatisticKind};
use crate::spectral::{SpectralFilter, SvdTriple, DROP_TOL};

#[derive(Debug, Clone)]
pub struct WitnessEvaluation {
    pub query_points: PointCloud,
    pub values: Vec<f64>,
    pub kind: StatisticKind,
}

impl WitnessEvaluation {
    /// One row per query point: coordinates followed by the witness value.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .query_points
            .points()
            .zip(&self.values)
            .map(|(p, v)| p.iter().copied().chain([*v]).collect())
            .collect();
        write_matrix_csv(path, None, rows.iter().map(|r| r.as_slice()))
    }

    /// `mean_{i<n1} w_i − mean_{i≥n1} w_i` when the queries are `X ∪ Y`.
    pub fn mean_gap(&self, n1: usize) -> f64 {
        let (x, y) = self.values.split_at(n1);
        x.iter().sum::<f64>() / x.len() as f64 - y.iter().sum::<f64>() / y.len() as f64
    }
}

fn check_dims(refset: &ReferenceSet, z: &PointCloud) -> Result<()> {
    if refset.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: refset.dim(),
            found: z.dim(),
        });
    }
    Ok(())
}

/// `ŵ(z) = Σ_r w_r a(r,z) (ĥ_X(r) − ĥ_Y(r))`.
pub fn witness_l2(a: &AffinityMatrix, refset: &ReferenceSet, z: &PointCloud) -> Result<WitnessEvaluation> {
    check_dims(refset, z)?;
    if a.n_refs() != refset.len() {
        return Err(Error::DimensionMismatch {
            expected: refset.len(),
            found: a.n_refs(),
        });
    }
    let (hx, hy) = histograms(a);
    let g: Vec<f64> = refset
        .weights()
        .iter()
        .zip(hx.iter().zip(&hy))
        .map(|(w, (x, y))| w * (x - y))
        .collect();
    let az = affinity_block(refset, z)?;
    let values = az
        .column_iter()
        .map(|col| col.iter().zip(&g).map(|(a, g)| a * g).sum())
        .collect();
    Ok(WitnessEvaluation {
        query_points: z.clone(),
        values,
        kind: StatisticKind::L2,
    })
}

/// Nyström-extended right singular vectors `V_Z = S⁻¹ Uᵀ Ã_Z`, one column
/// per query point, where `Ã_Z` carries the same reference weighting as the
/// matrix the SVD was taken of.
pub fn nystrom_extension(svd: &SvdTriple, refset: &ReferenceSet, z: &PointCloud) -> Result<DMatrix<f64>> {
    check_dims(refset, z)?;
    if svd.u.nrows() != refset.len() {
        return Err(Error::DimensionMismatch {
            expected: refset.len(),
            found: svd.u.nrows(),
        });
    }
    let n_r = refset.len() as f64;
    let mut az = affinity_block(refset, z)?;
    for mut col in az.column_iter_mut() {
        for (v, w) in col.iter_mut().zip(refset.weights()) {
            *v *= (n_r * w).sqrt();
        }
    }
    let mut vz = svd.u.transpose() * az;
    for (k, mut row) in vz.row_iter_mut().enumerate() {
        row /= svd.s[k];
    }
    Ok(vz)
}

/// `ŵ(z) = V_Zᵀ diag(f) (v_X − v_Y)`.
pub fn witness_spec(
    svd: &SvdTriple,
    n1: usize,
    n2: usize,
    filter: &SpectralFilter,
    refset: &ReferenceSet,
    z: &PointCloud,
) -> Result<WitnessEvaluation> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyBlock(if n1 == 0 { "X" } else { "Y" }));
    }
    if n1 + n2 != svd.v.nrows() {
        return Err(Error::DimensionMismatch {
            expected: svd.v.nrows(),
            found: n1 + n2,
        });
    }
    if filter.len() > svd.rank() {
        return Err(Error::DimensionMismatch {
            expected: svd.rank(),
            found: filter.len(),
        });
    }
    let s1 = svd.s[0];
    let mut k_used = filter.len();
    if let Some(bad) = (0..filter.len()).find(|&k| !(svd.s[k] >= DROP_TOL * s1)) {
        warn!(
            "witness: singular value {} of mode {} below threshold; dropping modes {}..{}",
            svd.s[bad],
            bad + 1,
            bad + 1,
            filter.len()
        );
        k_used = bad;
    }
    let (vx, vy) = spectral_means(svd, n1, k_used);
    let coef: Vec<f64> = (0..k_used).map(|k| filter.as_slice()[k] * (vx[k] - vy[k])).collect();
    let vz = nystrom_extension(svd, refset, z)?;
    let values = vz
        .column_iter()
        .map(|col| col.iter().zip(&coef).map(|(v, c)| v * c).sum())
        .collect();
    Ok(WitnessEvaluation {
        query_points: z.clone(),
        values,
        kind: StatisticKind::spec(svd.rank(), filter.clone()),
    })
}

/// Build the affinity matrix of `(X, Y)` and evaluate the chosen witness at `z`.
pub fn witness(
    x: &PointCloud,
    y: &PointCloud,
    refset: &ReferenceSet,
    kind: &StatisticKind,
    z: &PointCloud,
) -> Result<WitnessEvaluation> {
    let a = build_affinity_matrix(refset, x, y)?;
    match kind {
        StatisticKind::L2 => witness_l2(&a, refset, z),
        StatisticKind::Spec { rank, filter } => {
            let svd = spectral_decomposition(&a, *rank)?;
            let f = resolve_filter(filter, &svd, a.n_refs())?;
            let mut w = witness_spec(&svd, a.n1(), a.n2(), &f, refset, z)?;
            w.kind = kind.clone();
            Ok(w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_stream, SpdFactor};
    use crate::mmd::{mmd_l2, mmd_spec};
    use crate::spectral::{bandpass_filter, diffusion_filter};
    use rand::Rng;

    fn cloud(seed: u64, n: usize, d: usize, shift: f64) -> PointCloud {
        let mut rng = derive_stream(seed, 0);
        let data = (0..n * d).map(|_| rng.random::<f64>() + shift).collect();
        PointCloud::new(data, n, d).unwrap()
    }

    fn refset(seed: u64, n_r: usize, d: usize) -> ReferenceSet {
        let pts = cloud(seed, n_r, d, 0.0);
        let mut rng = derive_stream(seed, 1);
        let covs = (0..n_r)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..0.5)).collect();
                SpdFactor::diagonal(&v).unwrap()
            })
            .collect();
        let masses: Vec<f64> = (0..n_r).map(|_| rng.random_range(0.5..2.0)).collect();
        ReferenceSet::with_masses(pts, covs, &masses).unwrap()
    }

    #[test]
    fn identical_samples_give_zero_witness() {
        let x = cloud(1, 12, 2, 0.0);
        let rs = refset(2, 5, 2);
        let z = cloud(3, 7, 2, 0.0);
        let w = witness(&x, &x, &rs, &StatisticKind::L2, &z).unwrap();
        assert!(w.values.iter().all(|&v| v == 0.0));
        let w = witness(&x, &x, &rs, &StatisticKind::diffusion(5, 1), &z).unwrap();
        assert!(w.values.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn mean_gap_l2() {
        let (x, y) = (cloud(4, 15, 3, 0.0), cloud(5, 9, 3, 0.2));
        let rs = refset(6, 6, 3);
        let a = build_affinity_matrix(&rs, &x, &y).unwrap();
        let w = witness_l2(&a, &rs, &x.concat(&y).unwrap()).unwrap();
        assert!((w.mean_gap(15) - mmd_l2(&a)).abs() < 1e-12);
    }

    #[test]
    fn mean_gap_spec() {
        let (x, y) = (cloud(7, 20, 2, 0.0), cloud(8, 14, 2, 0.15));
        let rs = refset(9, 8, 2);
        let a = build_affinity_matrix(&rs, &x, &y).unwrap();
        let svd = spectral_decomposition(&a, 5).unwrap();
        let f = bandpass_filter(2, 5).unwrap();
        let w = witness_spec(&svd, 20, 14, &f, &rs, &x.concat(&y).unwrap()).unwrap();
        assert!((w.mean_gap(20) - mmd_spec(&svd, 20, 14, &f).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn nystrom_reproduces_training_rows() {
        let (x, y) = (cloud(10, 10, 2, 0.0), cloud(11, 10, 2, 0.1));
        let rs = refset(12, 6, 2);
        let a = build_affinity_matrix(&rs, &x, &y).unwrap();
        let svd = spectral_decomposition(&a, 4).unwrap();
        let vz = nystrom_extension(&svd, &rs, &x.concat(&y).unwrap()).unwrap();
        assert!((vz.transpose() - &svd.v).amax() < 1e-8);
    }

    #[test]
    fn single_mode_filter_is_scaled_first_singular_function() {
        let (x, y) = (cloud(13, 10, 2, 0.0), cloud(14, 8, 2, 0.3));
        let rs = refset(15, 5, 2);
        let a = build_affinity_matrix(&rs, &x, &y).unwrap();
        let svd = spectral_decomposition(&a, 3).unwrap();
        let f = SpectralFilter::new(vec![1.0, 0.0, 0.0]).unwrap();
        let z = cloud(16, 6, 2, 0.0);
        let w = witness_spec(&svd, 10, 8, &f, &rs, &z).unwrap();
        let vz = nystrom_extension(&svd, &rs, &z).unwrap();
        let (vx, vy) = spectral_means(&svd, 10, 1);
        for (j, v) in w.values.iter().enumerate() {
            assert!((v - vz[(0, j)] * (vx[0] - vy[0])).abs() < 1e-14);
        }
    }

    #[test]
    fn swapping_samples_negates() {
        let (x, y) = (cloud(17, 12, 2, 0.0), cloud(18, 12, 2, 0.2));
        let rs = refset(19, 6, 2);
        let z = cloud(20, 9, 2, 0.1);
        for kind in [StatisticKind::L2, StatisticKind::diffusion(6, 0)] {
            let a = witness(&x, &y, &rs, &kind, &z).unwrap();
            let b = witness(&y, &x, &rs, &kind, &z).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                assert!((u + v).abs() < 1e-10, "{u} {v}");
            }
        }
    }

    #[test]
    fn diffusion_zero_witness_equals_l2_witness() {
        let (x, y) = (cloud(21, 11, 2, 0.0), cloud(22, 13, 2, 0.2));
        let rs = refset(23, 5, 2);
        let a = build_affinity_matrix(&rs, &x, &y).unwrap();
        let svd = spectral_decomposition(&a, 5).unwrap();
        let f = diffusion_filter(svd.s.as_slice(), 0, 5).unwrap();
        let z = cloud(24, 10, 2, 0.0);
        let ws = witness_spec(&svd, 11, 13, &f, &rs, &z).unwrap();
        let wl = witness_l2(&a, &rs, &z).unwrap();
        for (u, v) in ws.values.iter().zip(&wl.values) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (x, y) = (cloud(1, 5, 2, 0.0), cloud(2, 5, 2, 0.0));
        let rs = refset(3, 3, 2);
        let z = cloud(4, 3, 3, 0.0);
        assert!(witness(&x, &y, &rs, &StatisticKind::L2, &z).is_err());
    }

    #[test]
    fn csv_rows_hold_point_and_value() {
        let dir = tempfile::tempdir().unwrap();
        let (x, y) = (cloud(1, 5, 2, 0.0), cloud(2, 5, 2, 0.3));
        let rs = refset(3, 3, 2);
        let w = witness(&x, &y, &rs, &StatisticKind::L2, &x).unwrap();
        let p = dir.path().join("w.csv");
        w.save_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }
}
