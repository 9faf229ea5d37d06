//! Many-sample comparison: pairwise MMD distances over a shared reference set,
//! an exponential affinity graph on the samples, and its spectral embedding.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{write_matrix_csv, PointCloud, ReferenceSet};
use crate::error::{Error, Result};
use crate::kernel::{affinity_block, AffinityMatrix};
use crate::mmd::{statistic, StatisticKind};

/// Symmetric matrix of squared distances with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d2: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(d2: DMatrix<f64>) -> Result<Self> {
        let k = d2.nrows();
        if d2.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: d2.ncols(),
            });
        }
        let asym = (&d2 - d2.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric(asym));
        }
        if (0..k).any(|i| d2[(i, i)] != 0.0) || d2.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("distances need a zero diagonal and nonnegative entries"));
        }
        Ok(Self { d2 })
    }

    pub fn len(&self) -> usize {
        self.d2.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d2.nrows() == 0
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.d2
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d2[(i, j)]
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let k = self.len();
        (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .map(|(i, j)| self.d2[(i, j)])
            .collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        save_square(&self.d2, path)
    }
}

fn save_square(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    write_matrix_csv(path, None, rows.iter().map(|r| r.as_slice()))
}

/// `d²[i][j]` = the chosen statistic between samples `i` and `j`.
///
/// Each sample's affinity block is built once. For L2 the distance is read off
/// the per-sample histograms; the spectral statistic needs an SVD per pair.
pub fn pairwise_distances(
    samples: &[PointCloud],
    refset: &ReferenceSet,
    kind: &StatisticKind,
) -> Result<DistanceMatrix> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let blocks: Vec<DMatrix<f64>> = samples
        .iter()
        .map(|s| affinity_block(refset, s))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let values: Vec<f64> = match kind {
        StatisticKind::L2 => {
            let hists: Vec<Vec<f64>> = blocks
                .iter()
                .map(|b| {
                    let inv = 1.0 / b.ncols() as f64;
                    b.row_iter().map(|r| r.sum() * inv).collect()
                })
                .collect();
            let w = refset.weights();
            pairs
                .par_iter()
                .map(|&(i, j)| {
                    w.iter()
                        .zip(hists[i].iter().zip(&hists[j]))
                        .map(|(w, (a, b))| w * (a - b) * (a - b))
                        .sum()
                })
                .collect()
        }
        StatisticKind::Spec { .. } => pairs
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (&blocks[i], &blocks[j]);
                let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
                m.columns_mut(0, a.ncols()).copy_from(a);
                m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
                let am = AffinityMatrix::new(m, a.ncols(), b.ncols(), refset.weights().to_vec())?;
                statistic(&am, kind)
            })
            .collect::<Result<_>>()?,
    };
    let mut d2 = DMatrix::zeros(k, k);
    for (&(i, j), v) in pairs.iter().zip(values) {
        let v = v.max(0.0);
        d2[(i, j)] = v;
        d2[(j, i)] = v;
    }
    DistanceMatrix::new(d2)
}

/// Median of the off-diagonal distances; the default graph scale.
pub fn median_scale(d: &DistanceMatrix) -> f64 {
    let mut v = d.off_diagonal();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let med = if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// `W[i][j] = exp(−d²[i][j] / scale)` off the diagonal, `W[i][i] = 0`.
pub fn affinity_graph(d: &DistanceMatrix, scale: f64) -> Result<DMatrix<f64>> {
    if !(scale > 0.0) {
        return Err(Error::invalid("graph scale must be positive"));
    }
    let k = d.len();
    Ok(DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            (-d.get(i, j) / scale).exp()
        }
    }))
}

/// Edge list `(i, j, weight)` for `i < j`.
pub fn save_edge_list(w: &DMatrix<f64>, path: &Path) -> Result<()> {
    let k = w.nrows();
    let rows: Vec<[f64; 3]> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .map(|(i, j)| [i as f64, j as f64, w[(i, j)]])
        .collect();
    write_matrix_csv(path, Some(&["i", "j", "weight"]), rows.iter().map(|r| r.as_slice()))
}

pub fn save_embedding(coords: &DMatrix<f64>, path: &Path) -> Result<()> {
    let rows: Vec<Vec<f64>> = coords.row_iter().map(|r| r.iter().copied().collect()).collect();
    write_matrix_csv(path, None, rows.iter().map(|r| r.as_slice()))
}

/// Leading nontrivial eigenvectors of `D^{-1/2} W D^{-1/2}`, mapped back by
/// `D^{-1/2}` and scaled by their eigenvalues. Row `i` holds the coordinates
/// of sample `i`; each column has its largest-magnitude entry positive.
pub fn spectral_embedding(w: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let k = w.nrows();
    if w.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: w.ncols(),
        });
    }
    if dim == 0 || dim >= k {
        return Err(Error::Graph(format!(
            "embedding dimension must lie in 1..{k}, got {dim}"
        )));
    }
    if (w - w.transpose()).amax() > 1e-12 {
        return Err(Error::NotSymmetric((w - w.transpose()).amax()));
    }
    let deg: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
    if let Some(i) = deg.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Graph(format!("sample {i} is isolated (zero degree)")));
    }
    let isq: Vec<f64> = deg.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut m = DMatrix::from_fn(k, k, |i, j| isq[i] * w[(i, j)] * isq[j]);
    // Deflate the trivial eigenvector D^{1/2}1 (eigenvalue 1).
    let total: f64 = deg.iter().sum();
    let u0 = DVector::from_iterator(k, deg.iter().map(|v| (v / total).sqrt()));
    m -= &u0 * u0.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(k, dim);
    for (c, &e) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[e];
        let mut col = DVector::from_iterator(k, (0..k).map(|i| lambda * isq[i] * eig.eigenvectors[(i, e)]));
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        out.set_column(c, &col);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_stream, SpdFactor};
    use crate::kernel::build_affinity_matrix;
    use crate::mmd::mmd_l2;
    use rand::Rng;

    fn cloud(seed: u64, n: usize, shift: f64) -> PointCloud {
        let mut rng = derive_stream(seed, 0);
        let data = (0..n * 2).map(|_| rng.random::<f64>() + shift).collect();
        PointCloud::new(data, n, 2).unwrap()
    }

    fn refset() -> ReferenceSet {
        let pts = cloud(100, 6, 0.2);
        ReferenceSet::with_shared_covariance(pts, SpdFactor::isotropic(2, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn two_samples_match_two_sample_statistic() {
        let (a, b) = (cloud(1, 20, 0.0), cloud(2, 15, 0.3));
        let rs = refset();
        let d = pairwise_distances(&[a.clone(), b.clone()], &rs, &StatisticKind::L2).unwrap();
        let t = mmd_l2(&build_affinity_matrix(&rs, &a, &b).unwrap());
        assert!((d.get(0, 1) - t).abs() < 1e-12);
        let kind = StatisticKind::diffusion(6, 1);
        let d = pairwise_distances(&[a.clone(), b.clone()], &rs, &kind).unwrap();
        let t = statistic(&build_affinity_matrix(&rs, &a, &b).unwrap(), &kind).unwrap();
        assert!((d.get(0, 1) - t).abs() < 1e-12);
    }

    #[test]
    fn duplicate_sample_has_zero_distance() {
        let a = cloud(3, 10, 0.0);
        let d = pairwise_distances(&[a.clone(), cloud(4, 10, 0.5), a], &refset(), &StatisticKind::L2).unwrap();
        assert_eq!(d.get(0, 2), 0.0);
        assert!(d.get(0, 1) > 0.0);
    }

    #[test]
    fn distance_matrix_validation() {
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])).is_err());
    }

    #[test]
    fn graph_weights() {
        let d = DistanceMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        let w = affinity_graph(&d, 1.0).unwrap();
        assert!(w
            .iter()
            .enumerate()
            .all(|(i, &v)| v == if i % 4 == 0 { 0.0 } else { 1.0 }));

        let d = DistanceMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0],
        ))
        .unwrap();
        let s = median_scale(&d);
        assert_eq!(s, 2.0);
        let w = affinity_graph(&d, s).unwrap();
        assert!((w[(0, 2)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(w[(0, 1)] > w[(0, 2)] && w[(0, 2)] > w[(1, 2)]);
        let w = affinity_graph(&d, 1e12).unwrap();
        assert!((w[(1, 2)] - 1.0).abs() < 1e-11);
        assert!(affinity_graph(&d, 0.0).is_err());
    }

    fn two_cliques() -> DMatrix<f64> {
        let mut w = DMatrix::from_element(6, 6, 1e-3);
        for i in 0..6 {
            for j in 0..6 {
                if i != j && (i < 3) == (j < 3) {
                    w[(i, j)] = 1.0;
                }
            }
            w[(i, i)] = 0.0;
        }
        w
    }

    #[test]
    fn cliques_separate_on_first_coordinate() {
        let e = spectral_embedding(&two_cliques(), 1).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = ((0..3).map(|i| e[(i, 0)]).collect(), (3..6).map(|i| e[(i, 0)]).collect());
        let (amax, amin) = (
            a.iter().cloned().fold(f64::MIN, f64::max),
            a.iter().cloned().fold(f64::MAX, f64::min),
        );
        let (bmax, bmin) = (
            b.iter().cloned().fold(f64::MIN, f64::max),
            b.iter().cloned().fold(f64::MAX, f64::min),
        );
        assert!(amin > bmax + 0.1 || bmin > amax + 0.1, "{a:?} {b:?}");
    }

    #[test]
    fn embedding_is_permutation_equivariant() {
        let mut rng = derive_stream(8, 0);
        let k = 7;
        let mut w = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..i {
                let v = rng.random_range(0.05..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let wp = DMatrix::from_fn(k, k, |i, j| w[(perm[i], perm[j])]);
        let e = spectral_embedding(&w, 2).unwrap();
        let ep = spectral_embedding(&wp, 2).unwrap();
        for i in 0..k {
            for c in 0..2 {
                assert!((ep[(i, c)] - e[(perm[i], c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn embedding_columns_degree_orthogonal() {
        let mut rng = derive_stream(9, 0);
        let k = 8;
        let mut w = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..i {
                let v = rng.random_range(0.05..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let deg: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
        let e = spectral_embedding(&w, 3).unwrap();
        for a in 0..3 {
            for b in 0..a {
                let ip: f64 = (0..k).map(|i| deg[i] * e[(i, a)] * e[(i, b)]).sum();
                assert!(ip.abs() < 1e-8);
            }
            let trivial: f64 = (0..k).map(|i| deg[i] * e[(i, a)]).sum();
            assert!(trivial.abs() < 1e-8);
        }
    }

    #[test]
    fn embedding_errors() {
        let w = two_cliques();
        assert!(spectral_embedding(&w, 6).is_err());
        assert!(spectral_embedding(&w, 0).is_err());
        let mut iso = w.clone();
        for j in 0..6 {
            iso[(0, j)] = 0.0;
            iso[(j, 0)] = 0.0;
        }
        assert!(matches!(spectral_embedding(&iso, 1), Err(Error::Graph(_))));
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let w = two_cliques();
        save_edge_list(&w, &dir.path().join("g.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 15);
        let d = DistanceMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        d.save_csv(&dir.path().join("d.csv")).unwrap();
    }
}
