//! Reference-set construction: density-balanced landmark sampling from a
//! data pool, then a local-PCA covariance at every landmark.

use log::debug;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{PointCloud, ReferenceSet, RngStream, SpdFactor};
use crate::error::{Error, Result};

/// Knobs of the inverse-density landmark sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSamplingConfig {
    pub n_r: usize,
    /// Candidates are drawn batch by batch from a shuffled pool.
    pub batch_size: usize,
    /// Gaussian KDE bandwidth; `None` uses the median nearest-neighbor distance.
    pub kde_bandwidth: Option<f64>,
    /// Jitter size as a fraction of the median nearest-neighbor distance.
    pub jitter_scale: f64,
    /// A jittered candidate is kept only if this many pool points lie within `radius`.
    pub min_neighbors: usize,
    /// `None` uses twice the median nearest-neighbor distance.
    pub radius: Option<f64>,
}

impl RefSamplingConfig {
    pub fn new(n_r: usize) -> Self {
        Self {
            n_r,
            batch_size: usize::MAX,
            kde_bandwidth: None,
            jitter_scale: 0.1,
            min_neighbors: 1,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPcaConfig {
    /// `None` uses `max(10, ⌈0.025·n⌉)`, capped at the pool size.
    pub k_neighbors: Option<usize>,
    /// `σ̃`; the local second moment is multiplied by `σ̃²`.
    pub scale_sigma_tilde: f64,
    /// `None` uses `1e-6 · trace(Cov(pool)) / d`.
    pub reg_floor: Option<f64>,
}

impl Default for LocalPcaConfig {
    fn default() -> Self {
        Self {
            k_neighbors: None,
            scale_sigma_tilde: 1.0,
            reg_floor: None,
        }
    }
}

/// The binary grid `2^k, k = −2..=2` of `σ̃` values.
pub const SIGMA_TILDE_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median over pool points of the distance to their nearest other point.
pub fn median_nn_distance(pool: &PointCloud) -> f64 {
    if pool.len() < 2 {
        return 0.0;
    }
    let mut nn: Vec<f64> = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let p = pool.point(i);
            (0..pool.len())
                .filter(|&j| j != i)
                .map(|j| dist2(p, pool.point(j)))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    if m % 2 == 1 {
        nn[m / 2]
    } else {
        0.5 * (nn[m / 2 - 1] + nn[m / 2])
    }
}

/// Unnormalized Gaussian KDE of the pool evaluated at each pool point.
pub fn pool_kde(pool: &PointCloud, bandwidth: f64) -> Vec<f64> {
    let s = -0.5 / (bandwidth * bandwidth);
    (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let p = pool.point(i);
            pool.points().map(|q| (s * dist2(p, q)).exp()).sum()
        })
        .collect()
}

/// Landmarks drawn with probability proportional to the inverse KDE value
/// within each batch, jittered, and kept when they have enough pool support.
pub fn sample_reference_points(
    pool: &PointCloud,
    config: &RefSamplingConfig,
    rng: &mut RngStream,
) -> Result<PointCloud> {
    let n = pool.len();
    let d = pool.dim();
    let c = config;
    if c.n_r == 0 {
        return Err(Error::invalid("n_R must be at least 1"));
    }
    if n < c.n_r {
        return Err(Error::Sampling(format!(
            "pool has {n} points but {} references were requested",
            c.n_r
        )));
    }
    if n < c.min_neighbors {
        return Err(Error::Sampling(format!(
            "pool has {n} points but min_neighbors is {}",
            c.min_neighbors
        )));
    }
    if c.batch_size == 0 || !(c.jitter_scale >= 0.0) {
        return Err(Error::invalid(
            "batch_size must be positive and jitter_scale nonnegative",
        ));
    }
    let med = median_nn_distance(pool);
    let scale = if med > 0.0 { med } else { 1.0 };
    let bandwidth = c.kde_bandwidth.unwrap_or(scale);
    let radius = c.radius.unwrap_or(2.0 * scale);
    if !(bandwidth > 0.0 && radius > 0.0) {
        return Err(Error::invalid("kde_bandwidth and radius must be positive"));
    }
    let inv_density: Vec<f64> = pool_kde(pool, bandwidth).into_iter().map(|p| 1.0 / p).collect();
    let jitter_max = c.jitter_scale * med;

    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let batch = c.batch_size.min(n);
    let per_batch = ((c.n_r * batch) as f64 / n as f64).ceil().max(1.0) as usize;
    let mut used = vec![false; n];
    let mut out: Vec<f64> = Vec::with_capacity(c.n_r * d);
    let (mut accepted, mut tried, mut cursor) = (0usize, 0usize, 0usize);
    let mut candidate = vec![0.0; d];

    while accepted < c.n_r {
        let members: Vec<usize> = order[cursor..]
            .iter()
            .chain(&order[..cursor])
            .copied()
            .filter(|&i| !used[i])
            .take(batch)
            .collect();
        if members.is_empty() {
            break;
        }
        cursor = (cursor + batch) % n;
        let mut weights: Vec<f64> = members.iter().map(|&i| inv_density[i]).collect();
        let quota = per_batch.min(c.n_r - accepted).min(members.len());
        for _ in 0..quota {
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (k, &w) in weights.iter().enumerate() {
                if w > 0.0 && u < w {
                    pick = k;
                    break;
                }
                u -= w;
            }
            while weights[pick] == 0.0 {
                pick -= 1;
            }
            weights[pick] = 0.0;
            let idx = members[pick];
            used[idx] = true;
            tried += 1;

            let src = pool.point(idx);
            let mut norm2 = 0.0;
            for k in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                candidate[k] = jitter_max * z;
                norm2 += candidate[k] * candidate[k];
            }
            // Keep the jitter inside a ball of radius jitter_scale × median NN distance.
            let shrink = if norm2 > jitter_max * jitter_max {
                jitter_max / norm2.sqrt()
            } else {
                1.0
            };
            for k in 0..d {
                candidate[k] = src[k] + shrink * candidate[k];
            }
            let support = pool
                .points()
                .filter(|q| dist2(q, &candidate) <= radius * radius)
                .count();
            if support >= c.min_neighbors {
                out.extend_from_slice(&candidate);
                accepted += 1;
            }
        }
    }
    if accepted < c.n_r {
        return Err(Error::Sampling(format!(
            "only {accepted} of {} candidates passed the neighbor filter after trying {tried} pool points \
             (min_neighbors = {}, radius = {radius})",
            c.n_r, c.min_neighbors
        )));
    }
    debug!("sampled {accepted} references from {tried} candidates");
    PointCloud::new(out, c.n_r, d)
}

/// Default eigenvalue floor: `1e-6 · trace(Cov(pool)) / d`, or `1e-12` for a degenerate pool.
pub fn default_reg_floor(pool: &PointCloud) -> f64 {
    let (n, d) = (pool.len() as f64, pool.dim());
    let mut mean = vec![0.0; d];
    for p in pool.points() {
        for k in 0..d {
            mean[k] += p[k] / n;
        }
    }
    let trace: f64 = pool.points().map(|p| dist2(p, &mean)).sum::<f64>() / n;
    let floor = 1e-6 * trace / d as f64;
    if floor > 0.0 {
        floor
    } else {
        1e-12
    }
}

pub fn default_k_neighbors(n: usize) -> usize {
    10usize.max((0.025 * n as f64).ceil() as usize).min(n)
}

/// Indices of the `k` pool points nearest to `r`, ties broken by index.
fn nearest(pool: &PointCloud, r: &[f64], k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = pool.points().enumerate().map(|(i, p)| (dist2(p, r), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, cmp);
        dist.truncate(k);
    }
    dist.sort_by(cmp);
    dist.into_iter().map(|(_, i)| i).collect()
}

/// `σ̃² · (1/k) Σ (x_j − r)(x_j − r)ᵀ` over the `k` nearest pool points, with
/// eigenvalues raised to the floor. Weights are uniform.
pub fn estimate_covariance_field(
    pool: &PointCloud,
    refs: &PointCloud,
    config: &LocalPcaConfig,
) -> Result<ReferenceSet> {
    if pool.dim() != refs.dim() {
        return Err(Error::DimensionMismatch {
            expected: pool.dim(),
            found: refs.dim(),
        });
    }
    let k = config.k_neighbors.unwrap_or_else(|| default_k_neighbors(pool.len()));
    if k < 2 {
        return Err(Error::invalid("k_neighbors must be at least 2"));
    }
    if k > pool.len() {
        return Err(Error::invalid(format!(
            "k_neighbors = {k} exceeds pool size {}",
            pool.len()
        )));
    }
    let s2 = config.scale_sigma_tilde * config.scale_sigma_tilde;
    if !(s2 > 0.0 && s2.is_finite()) {
        return Err(Error::invalid("sigma_tilde must be positive"));
    }
    let floor = config.reg_floor.unwrap_or_else(|| default_reg_floor(pool));
    let d = pool.dim();
    let covs = (0..refs.len())
        .into_par_iter()
        .map(|i| {
            let r = refs.point(i);
            let mut m = DMatrix::<f64>::zeros(d, d);
            for j in nearest(pool, r, k) {
                let x = pool.point(j);
                for a in 0..d {
                    let da = x[a] - r[a];
                    for b in 0..=a {
                        m[(a, b)] += da * (x[b] - r[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..a {
                    m[(b, a)] = m[(a, b)];
                }
            }
            m *= s2 / k as f64;
            SpdFactor::from_symmetric(&m, floor)
        })
        .collect::<Result<Vec<_>>>()?;
    ReferenceSet::uniform(refs.clone(), covs)
}

/// Sample landmarks, then estimate their covariance field.
pub fn build_reference_set(
    pool: &PointCloud,
    sampling: &RefSamplingConfig,
    pca: &LocalPcaConfig,
    rng: &mut RngStream,
) -> Result<ReferenceSet> {
    let refs = sample_reference_points(pool, sampling, rng)?;
    estimate_covariance_field(pool, &refs, pca)
}
