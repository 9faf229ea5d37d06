//! Kernel comparison on a contaminated alternative: Monte-Carlo moments of
//! `T_n` under `H0` and `H1`, the same moments from the limit law, and the
//! separation ratio `r = (θ₁ − θ₀)/(σ₁ + σ₀)`.

use std::f64::consts::FRAC_PI_2;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PointCloud, ReferenceSet, RngStream, SpdFactor};
use crate::error::{Error, Result};
use crate::mmd::{SpecFilter, StatisticKind};
use crate::spectral::bandpass_filter;
use crate::synthetic::{ArcDistribution, Contaminated, PointSampler};

use super::kernels::{kernel_for, FilteredKernel, GaussianKernel, ReferenceKernel, SymmetricKernel};
use super::limits::{limit_distribution, LimitRegime};
use super::spectrum::{centered_spectrum, LimitSpectrum, SpectrumConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// `n₁ = n₂`.
    pub n_per_sample: usize,
    pub tau: f64,
    /// Simulated tests per hypothesis.
    pub n_mc: usize,
    pub n_limit_draws: usize,
    /// Truncation `K`.
    pub k_max: usize,
    /// Draws from `p` (and from `q₁`) for the spectrum.
    pub m_points: usize,
    /// Cap on `m_points` for kernels without explicit features.
    pub max_gram_points: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            n_per_sample: 200,
            tau: 0.5,
            n_mc: 10_000,
            n_limit_draws: 50_000,
            k_max: 500,
            m_points: 10_000,
            max_gram_points: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kernel: String,
    /// Factor applied to the kernel so that `λ̃₁ = 1`.
    pub scale: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub theta0_bar: f64,
    pub theta1_bar: f64,
    pub sigma0_bar: f64,
    pub sigma1_bar: f64,
    pub ratio_r: f64,
    pub ratio_r_bar: f64,
    pub spectrum: LimitSpectrum,
    /// Scaled `T_n` of each simulated test under `H0`.
    #[serde(skip)]
    pub null_statistics: Vec<f64>,
    /// Scaled `T_n` of each simulated test under `H1`.
    #[serde(skip)]
    pub alt_statistics: Vec<f64>,
    /// Draws of `T_n` from the null limit law.
    #[serde(skip)]
    pub null_limit: Vec<f64>,
}

impl ComparisonReport {
    /// Null statistics on the `n·T_n` scale, `n = n₁ + n₂`.
    pub fn null_scaled(&self, n_total: usize) -> Vec<f64> {
        self.null_statistics.iter().map(|t| t * n_total as f64).collect()
    }

    pub fn null_limit_scaled(&self, n_total: usize) -> Vec<f64> {
        self.null_limit.iter().map(|t| t * n_total as f64).collect()
    }
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

pub fn separation_ratio(theta0: f64, theta1: f64, sigma0: f64, sigma1: f64) -> f64 {
    (theta1 - theta0) / (sigma1 + sigma0)
}

/// `T_n` between `n` draws from `p` and `n` from `y_law`, for `runs` seeded tests.
pub fn simulate_statistics(
    kernel: &dyn SymmetricKernel,
    p: &dyn PointSampler,
    y_law: &dyn PointSampler,
    n: usize,
    runs: usize,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    (0..runs)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.substream(b as u64);
            let x = p.sample(n, &mut r)?;
            let y = y_law.sample(n, &mut r)?;
            kernel.mmd2(&x, &y)
        })
        .collect()
}

/// Compare kernels on `p` against `q = (1−τ)p + τq₁`. Each kernel is
/// rescaled so its top centered eigenvalue is 1.
pub fn kernel_comparison(
    kernels: &[&dyn SymmetricKernel],
    p: &dyn PointSampler,
    q1: &dyn PointSampler,
    config: &ComparisonConfig,
    rng: &RngStream,
) -> Result<Vec<ComparisonReport>> {
    if !(config.tau > 0.0 && config.tau <= 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1], got {}", config.tau)));
    }
    if config.n_mc < 2 || config.n_per_sample == 0 {
        return Err(Error::invalid("need n_mc >= 2 and n_per_sample >= 1"));
    }
    let q = Contaminated {
        base: p,
        alt: q1,
        tau: config.tau,
    };
    let n = config.n_per_sample;
    let n_total = 2 * n;
    let a = config.tau * (n_total as f64).sqrt();
    kernels
        .iter()
        .enumerate()
        .map(|(i, kernel)| {
            let kr = rng.substream(i as u64);
            let has_features = kernel
                .features(&PointCloud::new(vec![0.0; p.dim()], 1, p.dim())?)?
                .is_some();
            let m = if has_features {
                config.m_points
            } else {
                config.m_points.min(config.max_gram_points)
            };
            let spec_cfg = SpectrumConfig {
                m_q: m,
                ..SpectrumConfig::new(m, config.k_max.min(m))
            };
            let (raw, _) = centered_spectrum(*kernel, p, q1, &spec_cfg, &kr.substream(0))?;
            let scale = 1.0 / raw.lambdas[0];
            let spectrum = raw.scaled(scale);
            info!(
                "{}: K = {}, sum lambda = {:.4}, T1 = {:.4e}",
                kernel.name(),
                spectrum.len(),
                spectrum.sum_lambda(),
                spectrum.t1()
            );

            let rescale = |v: Vec<f64>| v.into_iter().map(|t| t * scale).collect::<Vec<_>>();
            let null_statistics = rescale(simulate_statistics(*kernel, p, p, n, config.n_mc, &kr.substream(1))?);
            let alt_statistics = rescale(simulate_statistics(*kernel, p, &q, n, config.n_mc, &kr.substream(2))?);
            let (theta0, sigma0) = mean_sd(&null_statistics);
            let (theta1, sigma1) = mean_sd(&alt_statistics);

            let to_tn = |v: Vec<f64>| v.into_iter().map(|t| t / n_total as f64).collect::<Vec<_>>();
            let null_limit = to_tn(limit_distribution(
                &spectrum,
                LimitRegime::Null,
                config.n_limit_draws,
                &kr.substream(3),
            )?);
            let alt_limit = to_tn(limit_distribution(
                &spectrum,
                LimitRegime::Critical { a },
                config.n_limit_draws,
                &kr.substream(4),
            )?);
            let (theta0_bar, sigma0_bar) = mean_sd(&null_limit);
            let (theta1_bar, sigma1_bar) = mean_sd(&alt_limit);

            Ok(ComparisonReport {
                kernel: kernel.name(),
                scale,
                theta0,
                theta1,
                sigma0,
                sigma1,
                theta0_bar,
                theta1_bar,
                sigma0_bar,
                sigma1_bar,
                ratio_r: separation_ratio(theta0, theta1, sigma0, sigma1),
                ratio_r_bar: separation_ratio(theta0_bar, theta1_bar, sigma0_bar, sigma1_bar),
                spectrum,
                null_statistics,
                alt_statistics,
                null_limit,
            })
        })
        .collect()
}

/// Compare the kernels implied by `kinds` over a shared reference set. The
/// spectral kernels take their singular functions from a draw of `m_points`
/// from `p`.
pub fn compare_statistics(
    kinds: &[StatisticKind],
    refset: &ReferenceSet,
    p: &dyn PointSampler,
    q1: &dyn PointSampler,
    config: &ComparisonConfig,
    rng: &RngStream,
) -> Result<Vec<ComparisonReport>> {
    let base = p.sample(config.m_points, &mut rng.substream(u64::MAX))?;
    let owned = kinds
        .iter()
        .map(|k| kernel_for(k, refset, &base))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn SymmetricKernel> = owned.iter().map(|k| k.as_ref()).collect();
    kernel_comparison(&refs, p, q1, config, rng)
}

/// Reference grid in polar coordinates around the quarter circle, weighted by
/// the area element `ρ dρ dθ` so that the reference measure approximates
/// Lebesgue measure. Each `Σ_r` has variance `tangent_sd²` along the circle
/// and `normal_sd²` across it.
pub fn polar_arc_refset(
    angle_range: (f64, f64),
    angle_step: f64,
    radius_range: (f64, f64),
    radius_step: f64,
    tangent_sd: f64,
    normal_sd: f64,
) -> Result<ReferenceSet> {
    if !(angle_step > 0.0 && radius_step > 0.0) || angle_range.1 < angle_range.0 || radius_range.1 < radius_range.0 {
        return Err(Error::invalid("polar grid needs positive steps and ordered ranges"));
    }
    let grid = |(lo, hi): (f64, f64), step: f64| -> Vec<f64> {
        let k = ((hi - lo) / step).round() as usize;
        (0..=k).map(|i| lo + (hi - lo) * i as f64 / k.max(1) as f64).collect()
    };
    let angles = grid(angle_range, angle_step);
    let radii = grid(radius_range, radius_step);
    let mut pts = Vec::with_capacity(angles.len() * radii.len() * 2);
    let mut covs = Vec::new();
    let mut masses = Vec::new();
    let vals = DVector::from_vec(vec![tangent_sd * tangent_sd, normal_sd * normal_sd]);
    for &t in &angles {
        let (s, c) = t.sin_cos();
        let frame = DMatrix::from_column_slice(2, 2, &[-s, c, c, s]);
        let cov = SpdFactor::from_eigen(frame, vals.clone())?;
        for &rho in &radii {
            pts.extend_from_slice(&[rho * c, rho * s]);
            covs.push(cov.clone());
            masses.push(rho);
        }
    }
    let n = masses.len();
    ReferenceSet::with_masses(PointCloud::new(pts, n, 2)?, covs, &masses)
}

/// Reference grid for the quarter-circle example with noise level `eps_x`:
/// radii within `2.5·eps_x` of the unit circle, angles extending three
/// tangent deviations past both ends of the arc.
pub fn default_arc_refset(eps_x: f64) -> Result<ReferenceSet> {
    let tangent_sd = 0.2;
    polar_arc_refset(
        (-3.0 * tangent_sd, FRAC_PI_2 + 3.0 * tangent_sd),
        tangent_sd / 2.0,
        (1.0 - 2.5 * eps_x, 1.0 + 2.5 * eps_x),
        eps_x / 2.0,
        tangent_sd,
        eps_x,
    )
}

/// Gaussian, `k_L2` and band-pass filtered kernels for the quarter-circle
/// example with noise level `eps_x`.
pub struct ArcKernels {
    pub gaussian: GaussianKernel,
    pub l2: ReferenceKernel,
    pub spec: FilteredKernel,
}

impl ArcKernels {
    pub fn new(eps_x: f64, base_points: usize, rng: &RngStream) -> Result<Self> {
        let refset = default_arc_refset(eps_x)?;
        let p = ArcDistribution { radius: 1.0, eps_x };
        let base = p.sample(base_points, &mut rng.clone())?;
        let filter = SpecFilter::Weights(bandpass_filter(10, 20)?);
        Ok(Self {
            gaussian: GaussianKernel { eps: eps_x },
            spec: FilteredKernel::new(refset.clone(), &base, &filter)?,
            l2: ReferenceKernel { refset },
        })
    }

    pub fn all(&self) -> [&dyn SymmetricKernel; 3] {
        [&self.gaussian, &self.l2, &self.spec]
    }
}
