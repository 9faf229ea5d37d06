#![allow(dead_code)]

use akmmd::data::{derive_stream, PointCloud, ReferenceSet, SpdFactor};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub x: PointCloud,
    pub y: PointCloud,
    pub refset: ReferenceSet,
}

fn uniform_cloud(rng: &mut impl Rng, n: usize, d: usize, shift: f64) -> PointCloud {
    let data = (0..n * d).map(|_| rng.random::<f64>() + shift).collect();
    PointCloud::new(data, n, d).unwrap()
}

/// Random rotation times random spectrum.
fn random_spd(rng: &mut impl Rng, d: usize) -> SpdFactor {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let l = DVector::from_fn(d, |_, _| rng.random_range(0.05..0.6) * d as f64);
    SpdFactor::from_eigen(q, l).unwrap()
}

/// `n ≤ 50`, `n_R ≤ 10`, `d ≤ 5`, random covariances and nonuniform weights.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = derive_stream(seed, 0);
    let d = rng.random_range(1..=5);
    let n1 = rng.random_range(2..=25);
    let n2 = rng.random_range(2..=25);
    let n_r = rng.random_range(1..=10);
    let x = uniform_cloud(&mut rng, n1, d, 0.0);
    let y = uniform_cloud(&mut rng, n2, d, 0.15);
    let refs = uniform_cloud(&mut rng, n_r, d, 0.0);
    let covs = (0..n_r).map(|_| random_spd(&mut rng, d)).collect();
    let masses: Vec<f64> = (0..n_r).map(|_| rng.random_range(0.2..2.0)).collect();
    Instance {
        x,
        y,
        refset: ReferenceSet::with_masses(refs, covs, &masses).unwrap(),
    }
}

/// `exp(−½ (x − r)ᵀ Σ⁻¹ (x − r))` with a dense inverse.
pub fn affinity_dense(sigma_inv: &DMatrix<f64>, r: &[f64], x: &[f64]) -> f64 {
    let v = DVector::from_iterator(r.len(), x.iter().zip(r).map(|(a, b)| a - b));
    (-0.5 * (v.transpose() * sigma_inv * &v)[(0, 0)]).exp()
}

/// Biased MMD² as the kernel double sum with `k(x, y) = Σ_r w_r a(r,x) a(r,y)`.
pub fn brute_force_mmd2(inst: &Instance) -> f64 {
    let rs = &inst.refset;
    let inv: Vec<DMatrix<f64>> = rs
        .covariances()
        .iter()
        .map(|c| c.matrix().try_inverse().unwrap())
        .collect();
    let k = |a: &[f64], b: &[f64]| -> f64 {
        (0..rs.len())
            .map(|r| {
                let p = rs.points().point(r);
                rs.weights()[r] * affinity_dense(&inv[r], p, a) * affinity_dense(&inv[r], p, b)
            })
            .sum()
    };
    let mean_k = |u: &PointCloud, v: &PointCloud| -> f64 {
        let mut s = 0.0;
        for a in u.points() {
            for b in v.points() {
                s += k(a, b);
            }
        }
        s / (u.len() * v.len()) as f64
    };
    mean_k(&inst.x, &inst.x) + mean_k(&inst.y, &inst.y) - 2.0 * mean_k(&inst.x, &inst.y)
}

/// Kolmogorov–Smirnov distance between two empirical distributions.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
