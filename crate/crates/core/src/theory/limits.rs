//! Samplers for the limiting laws of `n·T_n` along `q = p + τ(q₁ − p)`.

use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RngStream;
use crate::error::{Error, Result};

use super::spectrum::LimitSpectrum;

const CHUNK: usize = 1024;

/// How the contamination `τ` scales with the total sample size `n = n₁ + n₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "lowercase")]
pub enum LimitRegime {
    /// `τ = 0`.
    Null,
    /// `τ√n → a`.
    Critical { a: f64 },
    /// `τ = n^{-1/2+δ}`, `0 < δ < 1/2`.
    Intermediate { n: usize, delta: f64 },
    /// `τ = 1`.
    Fixed { n: usize },
}

impl LimitRegime {
    /// The contamination level the regime prescribes at total size `n`.
    pub fn tau(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            LimitRegime::Null => 0.0,
            LimitRegime::Critical { a } => (a / n.sqrt()).min(1.0),
            LimitRegime::Intermediate { delta, .. } => n.powf(delta - 0.5).min(1.0),
            LimitRegime::Fixed { .. } => 1.0,
        }
    }

    /// Map a statistic `T_n` at total size `n` to the scale of the limit law.
    pub fn standardize(&self, spectrum: &LimitSpectrum, t_n: f64, n: usize) -> f64 {
        let nf = n as f64;
        match *self {
            LimitRegime::Null | LimitRegime::Critical { .. } => nf * t_n,
            LimitRegime::Intermediate { delta, .. } => {
                let nd = nf.powf(delta);
                (nf * t_n - nd * nd * spectrum.t1()) / nd
            }
            LimitRegime::Fixed { .. } => nf.sqrt() * (t_n - spectrum.t1()),
        }
    }
}

/// `σ²₍₂₎ = 4 Σ λ̃_k² c_k² (1/ρ₁ + 1/ρ₂)`.
pub fn intermediate_variance(spectrum: &LimitSpectrum) -> f64 {
    4.0 * spectrum.sum_lambda2_c2() * spectrum.xi_variance()
}

/// `σ²₍₃₎ = 4 (Σ λ̃_k² c_k² / ρ₁ + Σ_kl λ̃_k λ̃_l c_k c_l S_kl / ρ₂)`.
pub fn fixed_variance(spectrum: &LimitSpectrum) -> Result<f64> {
    let s = spectrum
        .cross_moments
        .as_ref()
        .ok_or_else(|| Error::invalid("the fixed-alternative law needs cross moments S_kl"))?;
    let u: Vec<f64> = spectrum.lambdas.iter().zip(&spectrum.cs).map(|(l, c)| l * c).collect();
    let quad: f64 = u
        .iter()
        .enumerate()
        .map(|(k, uk)| uk * s[k].iter().zip(&u).map(|(skl, ul)| skl * ul).sum::<f64>())
        .sum();
    Ok(4.0 * (spectrum.sum_lambda2_c2() / spectrum.rho1 + quad / spectrum.rho2()))
}

/// `n_draws` i.i.d. samples of the limit law of the regime, sums truncated at
/// the spectrum's `K`.
pub fn limit_distribution(
    spectrum: &LimitSpectrum,
    regime: LimitRegime,
    n_draws: usize,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(Error::invalid("spectrum is empty"));
    }
    let gaussian_sd = match regime {
        LimitRegime::Null | LimitRegime::Critical { .. } => None,
        LimitRegime::Intermediate { delta, .. } => {
            if !(delta > 0.0 && delta < 0.5) {
                return Err(Error::invalid(format!("delta must lie in (0, 1/2), got {delta}")));
            }
            Some(intermediate_variance(spectrum).sqrt())
        }
        LimitRegime::Fixed { .. } => Some(fixed_variance(spectrum)?.max(0.0).sqrt()),
    };
    let shift = match regime {
        LimitRegime::Critical { a } if !a.is_finite() || a < 0.0 => {
            return Err(Error::invalid(format!("a must be finite and nonnegative, got {a}")));
        }
        LimitRegime::Critical { a } => a,
        _ => 0.0,
    };
    let xi = Normal::new(0.0, spectrum.xi_variance().sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = vec![0.0; n_draws];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(b, chunk)| {
        let mut r = rng.substream(b as u64);
        for v in chunk.iter_mut() {
            *v = match gaussian_sd {
                Some(sd) => {
                    let z: f64 = StandardNormal.sample(&mut r);
                    sd * z
                }
                None => spectrum
                    .lambdas
                    .iter()
                    .zip(&spectrum.cs)
                    .map(|(l, c)| {
                        let z = -shift * c + xi.sample(&mut r);
                        l * z * z
                    })
                    .sum(),
            };
        }
    });
    Ok(out)
}
