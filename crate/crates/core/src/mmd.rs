//! Reference-set MMD statistics, the permutation null and the two-sample test.
//!
//! Both statistics are weighted squared gaps between block means of some
//! per-point profile: the raw affinity columns for L2, rows of the right
//! singular vectors for the spectral statistic. The permutation machinery is
//! shared between them.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::data::{PointCloud, ReferenceSet, RngStream, TestResult};
use crate::error::{Error, Result};
use crate::kernel::{build_affinity_matrix, AffinityMatrix};
use crate::spectral::{diffusion_filter, truncated_svd, SpectralFilter, SvdTriple};

/// How the spectral weights are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecFilter {
    /// Explicit weights `f_1..f_k`.
    Weights(SpectralFilter),
    /// `f_k = (S_k²/n_R)^{m+1}`, resolved once the SVD is known.
    Diffusion(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatisticKind {
    L2,
    Spec { rank: usize, filter: SpecFilter },
}

impl StatisticKind {
    pub fn spec(rank: usize, filter: SpectralFilter) -> Self {
        StatisticKind::Spec {
            rank,
            filter: SpecFilter::Weights(filter),
        }
    }

    pub fn diffusion(rank: usize, m: u32) -> Self {
        StatisticKind::Spec {
            rank,
            filter: SpecFilter::Diffusion(m),
        }
    }
}

/// Empirical histograms `ĥ_X(r)`, `ĥ_Y(r)`.
pub fn histograms(a: &AffinityMatrix) -> (Vec<f64>, Vec<f64>) {
    let n_r = a.n_refs();
    let mut hx = vec![0.0; n_r];
    let mut hy = vec![0.0; n_r];
    for j in 0..a.n1() {
        add_into(&mut hx, a.column(j));
    }
    for j in a.n1()..a.n() {
        add_into(&mut hy, a.column(j));
    }
    let (s1, s2) = (1.0 / a.n1() as f64, 1.0 / a.n2() as f64);
    hx.iter_mut().for_each(|v| *v *= s1);
    hy.iter_mut().for_each(|v| *v *= s2);
    (hx, hy)
}

#[inline]
fn add_into(acc: &mut [f64], col: &[f64]) {
    for (a, c) in acc.iter_mut().zip(col) {
        *a += c;
    }
}

/// `T = Σ_r w_r (ĥ_X(r) − ĥ_Y(r))²`.
pub fn mmd_l2(a: &AffinityMatrix) -> f64 {
    let (hx, hy) = histograms(a);
    weighted_gap(&hx, &hy, a.weights())
}

fn weighted_gap(u: &[f64], v: &[f64], g: &[f64]) -> f64 {
    g.iter()
        .zip(u.iter().zip(v))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum()
}

/// `diag(√(n_R w_r)) A`; equals `A` under the uniform measure.
pub fn weighted_values(a: &AffinityMatrix) -> DMatrix<f64> {
    let n_r = a.n_refs() as f64;
    let scale: Vec<f64> = a.weights().iter().map(|w| (n_r * w).sqrt()).collect();
    let mut m = a.values().clone();
    for mut col in m.column_iter_mut() {
        for (v, s) in col.iter_mut().zip(&scale) {
            *v *= s;
        }
    }
    m
}

/// Rank-`rank` SVD of the weighted affinity matrix, shared by the statistic,
/// its null and the witness.
pub fn spectral_decomposition(a: &AffinityMatrix, rank: usize) -> Result<SvdTriple> {
    truncated_svd(&weighted_values(a), rank)
}

/// Turn a filter choice into concrete weights no longer than the SVD rank.
pub fn resolve_filter(filter: &SpecFilter, svd: &SvdTriple, n_refs: usize) -> Result<SpectralFilter> {
    match filter {
        SpecFilter::Diffusion(m) => diffusion_filter(svd.s.as_slice(), *m, n_refs),
        SpecFilter::Weights(f) if f.len() > svd.rank() => {
            warn!(
                "filter has {} entries but only {} spectral modes are available; truncating",
                f.len(),
                svd.rank()
            );
            f.truncated(svd.rank())
        }
        SpecFilter::Weights(f) => Ok(f.clone()),
    }
}

/// `T = Σ_k f_k (v_X − v_Y)_k²` with `v_X`, `v_Y` the block means of the rows of `V`.
pub fn mmd_spec(svd: &SvdTriple, n1: usize, n2: usize, filter: &SpectralFilter) -> Result<f64> {
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
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyBlock(if n1 == 0 { "X" } else { "Y" }));
    }
    let (vx, vy) = spectral_means(svd, n1, filter.len());
    Ok(weighted_gap(&vx, &vy, filter.as_slice()))
}

/// Block means of the first `k` columns of `V`.
pub fn spectral_means(svd: &SvdTriple, n1: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = svd.v.nrows();
    let mean = |col: usize, range: std::ops::Range<usize>| {
        let len = range.len() as f64;
        range.map(|i| svd.v[(i, col)]).sum::<f64>() / len
    };
    let vx = (0..k).map(|c| mean(c, 0..n1)).collect();
    let vy = (0..k).map(|c| mean(c, n1..n)).collect();
    (vx, vy)
}

/// Trials per sweep of the profile matrix.
const BATCH: usize = 32;

/// Permutation engine over a column-major profile matrix (`dim × n`):
/// statistic = `Σ_k g_k (mean_X col_k − mean_Y col_k)²` for the first `g.len()` rows.
struct BlockGap<'a> {
    profiles: &'a DMatrix<f64>,
    g: &'a [f64],
    n1: usize,
    n2: usize,
    total: Vec<f64>,
}

impl<'a> BlockGap<'a> {
    fn new(profiles: &'a DMatrix<f64>, g: &'a [f64], n1: usize) -> Self {
        let dim = profiles.nrows();
        let mut total = vec![0.0; dim];
        for col in profiles.as_slice().chunks_exact(dim) {
            add_into(&mut total, col);
        }
        Self {
            profiles,
            g,
            n1,
            n2: profiles.ncols() - n1,
            total,
        }
    }

    fn gap(&self, sum_x: &[f64]) -> f64 {
        let (s1, s2) = (1.0 / self.n1 as f64, 1.0 / self.n2 as f64);
        self.g
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let gap = sum_x[k] * s1 - (self.total[k] - sum_x[k]) * s2;
                w * gap * gap
            })
            .sum()
    }

    /// Statistics for trials `first..first + count`, sharing one sweep over the columns.
    fn batch(&self, first: usize, count: usize, rng: &RngStream) -> Vec<f64> {
        debug_assert!(count <= BATCH);
        let n = self.n1 + self.n2;
        let dim = self.profiles.nrows();
        let mut idx = vec![0usize; n];
        let mut mask = vec![0u32; n];
        for s in 0..count {
            let mut r = rng.substream((first + s) as u64);
            idx.iter_mut().enumerate().for_each(|(i, v)| *v = i);
            for i in 0..self.n1 {
                let j = r.random_range(i..n);
                idx.swap(i, j);
                mask[idx[i]] |= 1 << s;
            }
        }
        let mut sums = vec![0.0; count * dim];
        for (col, &m) in self.profiles.as_slice().chunks_exact(dim).zip(&mask) {
            let mut m = m;
            while m != 0 {
                let s = m.trailing_zeros() as usize;
                add_into(&mut sums[s * dim..(s + 1) * dim], col);
                m &= m - 1;
            }
        }
        sums.chunks_exact(dim).map(|sum_x| self.gap(sum_x)).collect()
    }

    fn null(&self, n_boot: usize, rng: &RngStream) -> Vec<f64> {
        let starts: Vec<usize> = (0..n_boot).step_by(BATCH).collect();
        starts
            .into_par_iter()
            .flat_map_iter(|s| self.batch(s, BATCH.min(n_boot - s), rng))
            .collect()
    }
}

/// Null samples of the statistic by relabeling the pooled columns.
///
/// Trial `b` draws from `rng.substream(b)`, so the output does not depend on
/// the worker-pool size. For the spectral statistic the SVD is computed once
/// and the rows of `V` are permuted.
pub fn permutation_null(a: &AffinityMatrix, kind: &StatisticKind, n_boot: usize, rng: &RngStream) -> Result<Vec<f64>> {
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be at least 1"));
    }
    match kind {
        StatisticKind::L2 => Ok(BlockGap::new(a.values(), a.weights(), a.n1()).null(n_boot, rng)),
        StatisticKind::Spec { rank, filter } => {
            let svd = spectral_decomposition(a, *rank)?;
            let f = resolve_filter(filter, &svd, a.n_refs())?;
            let vt = svd.v.transpose();
            Ok(BlockGap::new(&vt, f.as_slice(), a.n1()).null(n_boot, rng))
        }
    }
}

/// Observed statistic and its permutation null from one affinity matrix.
pub fn statistic_and_null(
    a: &AffinityMatrix,
    kind: &StatisticKind,
    n_boot: usize,
    rng: &RngStream,
) -> Result<(f64, Vec<f64>)> {
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be at least 1"));
    }
    match kind {
        StatisticKind::L2 => {
            let t = mmd_l2(a);
            Ok((t, BlockGap::new(a.values(), a.weights(), a.n1()).null(n_boot, rng)))
        }
        StatisticKind::Spec { rank, filter } => {
            let svd = spectral_decomposition(a, *rank)?;
            let f = resolve_filter(filter, &svd, a.n_refs())?;
            let t = mmd_spec(&svd, a.n1(), a.n2(), &f)?;
            let vt = svd.v.transpose();
            Ok((t, BlockGap::new(&vt, f.as_slice(), a.n1()).null(n_boot, rng)))
        }
    }
}

/// Observed statistic only.
pub fn statistic(a: &AffinityMatrix, kind: &StatisticKind) -> Result<f64> {
    match kind {
        StatisticKind::L2 => Ok(mmd_l2(a)),
        StatisticKind::Spec { rank, filter } => {
            let svd = spectral_decomposition(a, *rank)?;
            let f = resolve_filter(filter, &svd, a.n_refs())?;
            mmd_spec(&svd, a.n1(), a.n2(), &f)
        }
    }
}

/// Empirical `(1−α)`-quantile, higher order statistic: the smallest null
/// value whose rank is at least `⌈(1−α)·n_boot⌉`.
pub fn quantile_threshold(null: &[f64], alpha: f64) -> f64 {
    let mut sorted = null.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    let k = (((1.0 - alpha) * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    sorted[k - 1]
}

/// Add-one permutation p-value `(1 + #{null ≥ T}) / (n_boot + 1)`.
pub fn permutation_p_value(statistic: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

/// Decision step shared by every caller that already holds an affinity matrix.
pub fn test_affinity(
    a: &AffinityMatrix,
    kind: &StatisticKind,
    alpha: f64,
    n_boot: usize,
    rng: &RngStream,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let (t, null) = statistic_and_null(a, kind, n_boot, rng)?;
    let threshold = quantile_threshold(&null, alpha);
    Ok(TestResult {
        statistic: t,
        p_value: permutation_p_value(t, &null),
        threshold_t_alpha: threshold,
        reject: t > threshold,
        alpha,
        n_boot,
        seed: rng.master_seed(),
        null_samples: null,
    })
}

/// Full two-sample test: build `[A_X | A_Y]`, compute the statistic and its
/// permutation null, and reject when the statistic exceeds `t_α`.
pub fn two_sample_test(
    x: &PointCloud,
    y: &PointCloud,
    refset: &ReferenceSet,
    kind: &StatisticKind,
    alpha: f64,
    n_boot: usize,
    rng: &RngStream,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let a = build_affinity_matrix(refset, x, y)?;
    test_affinity(&a, kind, alpha, n_boot, rng)
}

/// Permutation test for a kernel given by its Gram matrix over the pooled
/// sample (`X` first, then `Y`). Relabelings follow the same per-trial
/// streams as [`permutation_null`].
pub fn gram_two_sample_test(
    gram: &DMatrix<f64>,
    n1: usize,
    alpha: f64,
    n_boot: usize,
    rng: &RngStream,
) -> Result<TestResult> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: gram.ncols(),
        });
    }
    if n1 == 0 || n1 >= n {
        return Err(Error::EmptyBlock(if n1 == 0 { "X" } else { "Y" }));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be at least 1"));
    }
    let n2 = n - n1;
    let quad = |in_x: &[bool]| {
        let s = DVector::from_iterator(
            n,
            in_x.iter().map(|&x| if x { 1.0 / n1 as f64 } else { -1.0 / n2 as f64 }),
        );
        s.dot(&(gram * &s))
    };
    let observed: Vec<bool> = (0..n).map(|i| i < n1).collect();
    let t = quad(&observed);
    let null: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.substream(b as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            let mut in_x = vec![false; n];
            for i in 0..n1 {
                let j = r.random_range(i..n);
                idx.swap(i, j);
                in_x[idx[i]] = true;
            }
            quad(&in_x)
        })
        .collect();
    let threshold = quantile_threshold(&null, alpha);
    Ok(TestResult {
        statistic: t,
        p_value: permutation_p_value(t, &null),
        threshold_t_alpha: threshold,
        reject: t > threshold,
        alpha,
        n_boot,
        seed: rng.master_seed(),
        null_samples: null,
    })
}
