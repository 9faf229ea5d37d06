//! Spectrum of the kernel centered under `p`, and the departure constants
//! `c_k` of an alternative `q`.

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{PointCloud, ReferenceSet, RngStream};
use crate::error::{Error, Result};
use crate::mmd::StatisticKind;
use crate::synthetic::PointSampler;

use super::kernels::{kernel_for, SymmetricKernel};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// `(λ̃_k, c_k)` pairs of the centered kernel and the optional cross moments
/// `S_kl = E_q[ψ̃_k ψ̃_l] − c_k c_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSpectrum {
    pub lambdas: Vec<f64>,
    pub cs: Vec<f64>,
    pub cross_moments: Option<Vec<Vec<f64>>>,
    pub rho1: f64,
}

impl LimitSpectrum {
    pub fn new(lambdas: Vec<f64>, cs: Vec<f64>, rho1: f64) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != cs.len() {
            return Err(Error::invalid(
                "spectrum needs equally many (>= 1) eigenvalues and constants",
            ));
        }
        if !(rho1 > 0.0 && rho1 < 1.0) {
            return Err(Error::invalid(format!("rho1 must lie in (0,1), got {rho1}")));
        }
        if lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) || cs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "eigenvalues must be finite and nonnegative, constants finite",
            ));
        }
        if lambdas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("eigenvalues must be nonincreasing"));
        }
        Ok(Self {
            lambdas,
            cs,
            cross_moments: None,
            rho1,
        })
    }

    pub fn with_cross_moments(mut self, s: DMatrix<f64>) -> Result<Self> {
        let k = self.len();
        if s.shape() != (k, k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: s.nrows(),
            });
        }
        self.cross_moments = Some(s.row_iter().map(|r| r.iter().copied().collect()).collect());
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn rho2(&self) -> f64 {
        1.0 - self.rho1
    }

    /// `1/ρ₁ + 1/ρ₂`, the variance of each `ξ_k`.
    pub fn xi_variance(&self) -> f64 {
        1.0 / self.rho1 + 1.0 / self.rho2()
    }

    pub fn sum_lambda(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// `T₁ = Σ λ̃_k c_k²`, the population statistic of the departure.
    pub fn t1(&self) -> f64 {
        self.lambdas.iter().zip(&self.cs).map(|(l, c)| l * c * c).sum()
    }

    /// `Σ λ̃_k² c_k²`.
    pub fn sum_lambda2_c2(&self) -> f64 {
        self.lambdas.iter().zip(&self.cs).map(|(l, c)| l * l * c * c).sum()
    }

    /// Keep the first `k` modes.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len()).max(1);
        Self {
            lambdas: self.lambdas[..k].to_vec(),
            cs: self.cs[..k].to_vec(),
            cross_moments: self
                .cross_moments
                .as_ref()
                .map(|s| s[..k].iter().map(|r| r[..k].to_vec()).collect()),
            rho1: self.rho1,
        }
    }

    /// Eigenvalues multiplied by `factor` (the spectrum of `factor · k`).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambdas: self.lambdas.iter().map(|l| l * factor).collect(),
            ..self.clone()
        }
    }
}

enum Representation {
    /// `ψ̃_k(z) = (φ(z) − φ̄)ᵀ u_k / √λ_k`; `directions` holds `u_k / √λ_k` as rows.
    Features {
        mean: DVector<f64>,
        directions: DMatrix<f64>,
    },
    /// Nyström: `ψ̃_k(z) = Σ_i α_ik k̃(z, x_i)` with `α = v_k / (λ_k √m)`.
    Gram {
        train: PointCloud,
        alphas: DMatrix<f64>,
        row_means: DVector<f64>,
        grand_mean: f64,
    },
}

/// Empirical eigenpairs of the kernel centered under a sample from `p`, able
/// to evaluate the eigenfunctions `ψ̃_k` anywhere.
pub struct CenteredEigensystem<'k> {
    kernel: &'k dyn SymmetricKernel,
    lambdas: Vec<f64>,
    repr: Representation,
}

impl<'k> CenteredEigensystem<'k> {
    /// Eigendecompose `(1/m) K̃` for the `m` points of `sample`, keeping at
    /// most `k_max` modes. Negative eigenvalues are clipped (and dropped).
    pub fn fit(kernel: &'k dyn SymmetricKernel, sample: &PointCloud, k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::invalid("k_max must be at least 1"));
        }
        let m = sample.len();
        match kernel.features(sample)? {
            Some(phi) => {
                let mean = phi.column_mean();
                let mut centered = phi;
                for mut col in centered.column_iter_mut() {
                    col -= &mean;
                }
                let cov = &centered * centered.transpose() / m as f64;
                let (vals, vecs) = sorted_eigen(cov);
                let keep = usable_modes(&vals, k_max);
                let mut directions = DMatrix::zeros(keep, vecs.nrows());
                for k in 0..keep {
                    let col = oriented(vecs.column(k).into_owned());
                    directions.set_row(k, &(col / vals[k].sqrt()).transpose());
                }
                Ok(Self {
                    kernel,
                    lambdas: vals[..keep].to_vec(),
                    repr: Representation::Features { mean, directions },
                })
            }
            None => {
                let g = kernel.gram(sample, sample)?;
                let row_means = DVector::from_iterator(m, g.row_iter().map(|r| r.mean()));
                let grand_mean = row_means.mean();
                let mut kt = g;
                for i in 0..m {
                    for j in 0..m {
                        kt[(i, j)] += grand_mean - row_means[i] - row_means[j];
                    }
                }
                kt /= m as f64;
                let (vals, vecs) = sorted_eigen(kt);
                let keep = usable_modes(&vals, k_max);
                let mut alphas = DMatrix::zeros(m, keep);
                for k in 0..keep {
                    let v = oriented(vecs.column(k).into_owned());
                    alphas.set_column(k, &(v / (vals[k] * (m as f64).sqrt())));
                }
                Ok(Self {
                    kernel,
                    lambdas: vals[..keep].to_vec(),
                    repr: Representation::Gram {
                        train: sample.clone(),
                        alphas,
                        row_means,
                        grand_mean,
                    },
                })
            }
        }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// `ψ̃_k(z_j)` as a `K × n_z` matrix.
    pub fn eval(&self, z: &PointCloud) -> Result<DMatrix<f64>> {
        match &self.repr {
            Representation::Features { mean, directions } => {
                let mut phi = self
                    .kernel
                    .features(z)?
                    .ok_or_else(|| Error::invalid("kernel lost its feature map"))?;
                for mut col in phi.column_iter_mut() {
                    col -= mean;
                }
                Ok(directions * phi)
            }
            Representation::Gram {
                train,
                alphas,
                row_means,
                grand_mean,
            } => {
                let mut kz = self.kernel.gram(train, z)?;
                let col_means: Vec<f64> = kz.column_iter().map(|c| c.mean()).collect();
                for (j, mut col) in kz.column_iter_mut().enumerate() {
                    for (i, v) in col.iter_mut().enumerate() {
                        *v += grand_mean - row_means[i] - col_means[j];
                    }
                }
                Ok(alphas.transpose() * kz)
            }
        }
    }
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

fn usable_modes(vals: &[f64], k_max: usize) -> usize {
    let top = vals.first().copied().unwrap_or(0.0);
    let negatives = vals.iter().filter(|&&v| v < 0.0).count();
    if negatives > 0 {
        info!("clipped {negatives} negative centered eigenvalues to zero");
    }
    let rank = vals.iter().take_while(|&&v| top > 0.0 && v > RANK_TOL * top).count();
    if rank < k_max {
        warn!("requested {k_max} modes but the centered kernel has numerical rank {rank}");
    }
    rank.min(k_max)
}

fn oriented(mut v: DVector<f64>) -> DVector<f64> {
    let i = v.iamax();
    if v[i] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Sample sizes for spectrum estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumConfig {
    /// Draws from `p` for the eigendecomposition.
    pub m_points: usize,
    /// Fresh draws from `q` for `c_k` and `S_kl`.
    pub m_q: usize,
    /// Truncation `K`.
    pub k_max: usize,
    pub rho1: f64,
    pub cross_moments: bool,
}

impl SpectrumConfig {
    pub fn new(m_points: usize, k_max: usize) -> Self {
        Self {
            m_points,
            m_q: m_points,
            k_max,
            rho1: 0.5,
            cross_moments: false,
        }
    }
}

/// Estimate `(λ̃_k, c_k)` for `kernel` with `p` and alternative `q`:
/// eigenpairs of `(1/m)K̃` on `m_points` draws from `p`, then `c_k` as the mean
/// of the Nyström-extended `ψ̃_k` over `m_q` fresh draws from `q`.
pub fn centered_spectrum<'k>(
    kernel: &'k dyn SymmetricKernel,
    p: &dyn PointSampler,
    q: &dyn PointSampler,
    config: &SpectrumConfig,
    rng: &RngStream,
) -> Result<(LimitSpectrum, CenteredEigensystem<'k>)> {
    if config.m_points < config.k_max {
        return Err(Error::invalid(format!(
            "m_points = {} is below K = {}",
            config.m_points, config.k_max
        )));
    }
    let xp = p.sample(config.m_points, &mut rng.substream(0))?;
    let sys = CenteredEigensystem::fit(kernel, &xp, config.k_max)?;
    let yq = q.sample(config.m_q, &mut rng.substream(1))?;
    let psi = sys.eval(&yq)?;
    let mq = yq.len() as f64;
    let cs: Vec<f64> = psi.row_iter().map(|r| r.sum() / mq).collect();
    let mut spec = LimitSpectrum::new(sys.lambdas.clone(), cs.clone(), config.rho1)?;
    if config.cross_moments {
        let k = sys.len();
        let mut s = &psi * psi.transpose() / mq;
        for a in 0..k {
            for b in 0..k {
                s[(a, b)] -= cs[a] * cs[b];
            }
        }
        spec = spec.with_cross_moments(s)?;
    }
    Ok((spec, sys))
}

/// Spectrum of the kernel implied by a statistic over `refset`. The spectral
/// kernel's singular functions are taken from a separate draw from `p`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_centered_spectrum(
    kind: &StatisticKind,
    refset: &ReferenceSet,
    p: &dyn PointSampler,
    q: &dyn PointSampler,
    m_points: usize,
    rho1: f64,
    k_max: usize,
    rng: &RngStream,
) -> Result<LimitSpectrum> {
    let base = p.sample(m_points, &mut rng.substream(2))?;
    let kernel = kernel_for(kind, refset, &base)?;
    let config = SpectrumConfig {
        rho1,
        ..SpectrumConfig::new(m_points, k_max)
    };
    Ok(centered_spectrum(kernel.as_ref(), p, q, &config, rng)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_stream, SpdFactor};
    use crate::synthetic::ArcDistribution;
    use crate::theory::kernels::{GaussianKernel, ReferenceKernel};

    fn arc_refset(n_r: usize) -> ReferenceSet {
        let p = ArcDistribution {
            radius: 1.0,
            eps_x: 0.02,
        };
        let refs = p.sample(n_r, &mut derive_stream(77, 0)).unwrap();
        ReferenceSet::with_shared_covariance(refs, SpdFactor::isotropic(2, 0.01).unwrap()).unwrap()
    }

    #[test]
    fn spectrum_validation() {
        assert!(LimitSpectrum::new(vec![], vec![], 0.5).is_err());
        assert!(LimitSpectrum::new(vec![1.0], vec![0.0, 1.0], 0.5).is_err());
        assert!(LimitSpectrum::new(vec![0.5, 1.0], vec![0.0, 1.0], 0.5).is_err());
        assert!(LimitSpectrum::new(vec![1.0], vec![0.0], 1.0).is_err());
        let s = LimitSpectrum::new(vec![0.5, 0.25], vec![1.0, 0.5], 0.5).unwrap();
        assert_eq!(s.t1(), 0.5625);
        assert_eq!(s.xi_variance(), 4.0);
    }

    #[test]
    fn equal_distributions_give_vanishing_constants() {
        let p = ArcDistribution {
            radius: 1.0,
            eps_x: 0.02,
        };
        let kernel = ReferenceKernel { refset: arc_refset(30) };
        let cfg = SpectrumConfig::new(2000, 20);
        let (spec, _) = centered_spectrum(&kernel, &p, &p, &cfg, &derive_stream(1, 0)).unwrap();
        // Unit p-variance per mode, so the q = p mean has standard error 1/√m.
        let bound = 4.0 / (cfg.m_q as f64).sqrt();
        assert!(spec.cs.iter().all(|c| c.abs() < bound), "{:?}", spec.cs);
    }

    #[test]
    fn eigenfunctions_are_centered_and_normalized() {
        let p = ArcDistribution {
            radius: 1.0,
            eps_x: 0.02,
        };
        for kernel in [
            Box::new(ReferenceKernel { refset: arc_refset(25) }) as Box<dyn SymmetricKernel>,
            Box::new(GaussianKernel { eps: 0.1 }),
        ] {
            let train = p.sample(600, &mut derive_stream(2, 0)).unwrap();
            let sys = CenteredEigensystem::fit(kernel.as_ref(), &train, 10).unwrap();
            let psi = sys.eval(&train).unwrap();
            for k in 0..sys.len() {
                let row = psi.row(k);
                assert!(row.mean().abs() < 1e-8);
                assert!((row.norm_squared() / 600.0 - 1.0).abs() < 1e-6);
            }
            assert!(sys.lambdas().windows(2).all(|w| w[1] <= w[0]));
            // Held-out p draws: means within 3/√m.
            let fresh = p.sample(600, &mut derive_stream(3, 0)).unwrap();
            let psi = sys.eval(&fresh).unwrap();
            let bound = 3.0 / (600f64).sqrt();
            for k in 0..sys.len() {
                assert!(psi.row(k).mean().abs() < bound, "{} mode {k}", kernel.name());
            }
        }
    }

    #[test]
    fn gram_and_feature_routes_agree() {
        struct GramOnly(ReferenceKernel);
        impl SymmetricKernel for GramOnly {
            fn name(&self) -> String {
                "gram-only".into()
            }
            fn features(&self, _: &PointCloud) -> Result<Option<DMatrix<f64>>> {
                Ok(None)
            }
            fn gram(&self, a: &PointCloud, b: &PointCloud) -> Result<DMatrix<f64>> {
                self.0.gram(a, b)
            }
        }
        let k = ReferenceKernel { refset: arc_refset(15) };
        let g = GramOnly(k.clone());
        let train = ArcDistribution {
            radius: 1.0,
            eps_x: 0.02,
        }
        .sample(300, &mut derive_stream(4, 0))
        .unwrap();
        let a = CenteredEigensystem::fit(&k, &train, 6).unwrap();
        let b = CenteredEigensystem::fit(&g, &train, 6).unwrap();
        for (x, y) in a.lambdas().iter().zip(b.lambdas()) {
            assert!((x - y).abs() < 1e-10 * x.max(1e-3));
        }
        let z = ArcDistribution {
            radius: 0.97,
            eps_x: 0.02,
        }
        .sample(20, &mut derive_stream(5, 0))
        .unwrap();
        let (pa, pb) = (a.eval(&z).unwrap(), b.eval(&z).unwrap());
        // Well-separated leading modes agree up to the shared sign convention.
        for k in 0..3 {
            let gap = (a.lambdas()[k] - a.lambdas()[k + 1]).abs() / a.lambdas()[0];
            if gap > 1e-3 {
                let d = (pa.row(k) - pb.row(k)).amax().min((pa.row(k) + pb.row(k)).amax());
                assert!(d < 1e-6, "mode {k}: {d}");
            }
        }
    }

    #[test]
    fn trace_bounds_for_bounded_kernel() {
        let p = ArcDistribution {
            radius: 1.0,
            eps_x: 0.02,
        };
        let q = ArcDistribution {
            radius: 0.95,
            eps_x: 0.02,
        };
        let spec = estimate_centered_spectrum(
            &StatisticKind::L2,
            &arc_refset(40),
            &p,
            &q,
            1500,
            0.5,
            40,
            &derive_stream(6, 0),
        )
        .unwrap();
        assert!(spec.sum_lambda() <= 4.0);
        assert!(spec.lambdas.iter().map(|l| l * l).sum::<f64>() <= 16.0);
        assert!(spec.t1() > 0.0);
    }

    #[test]
    fn cross_moments_are_covariances() {
        let p = ArcDistribution {
            radius: 1.0,
            eps_x: 0.02,
        };
        let q = ArcDistribution {
            radius: 0.9,
            eps_x: 0.02,
        };
        let kernel = ReferenceKernel { refset: arc_refset(20) };
        let cfg = SpectrumConfig {
            cross_moments: true,
            ..SpectrumConfig::new(800, 8)
        };
        let (spec, _) = centered_spectrum(&kernel, &p, &q, &cfg, &derive_stream(7, 0)).unwrap();
        let s = spec.cross_moments.unwrap();
        for a in 0..s.len() {
            assert!(s[a][a] >= -1e-12);
            for b in 0..a {
                assert!((s[a][b] - s[b][a]).abs() < 1e-12);
            }
        }
    }
}
