//! Non-asymptotic lower bound on the power of the test at level `α`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::spectrum::LimitSpectrum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBoundReport {
    pub t1: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Minimum total size `n` for the bound to apply.
    pub n_threshold: f64,
    pub n_condition_ok: bool,
    pub separation_condition_ok: bool,
    /// `None` when either condition fails.
    pub lower_bound_power: Option<f64>,
}

impl PowerBoundReport {
    pub fn is_applicable(&self) -> bool {
        self.lower_bound_power.is_some()
    }
}

/// Evaluate the bound for `q = p + τ(q₁ − p)` with total size `n` and the
/// split `ρ₁` stored in `spectrum`.
pub fn power_lower_bound(spectrum: &LimitSpectrum, tau: f64, n: usize, alpha: f64) -> Result<PowerBoundReport> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (r1, r2) = (spectrum.rho1, spectrum.rho2());
    let t1 = spectrum.t1();
    let c1 = 4.0 * (spectrum.sum_lambda2_c2() / r1 + 16.0 / r2);
    let c2 = 128.0 * (1.0 / (r1 * r1) + 1.0 / (r2 * r2));
    let c3 = 32.0 / (r1 * r2).powi(2);
    let c4 = spectrum.sum_lambda() / (r1 * r2);
    let n_threshold = (16.0 / 0.1) * (1.0 / r1.powi(3) + 4.0 / r2.powi(3));
    let m = tau * tau * n as f64;
    let margin = c4 + ((c3 + 0.1) / alpha).sqrt();
    let n_condition_ok = n as f64 > n_threshold;
    let separation_condition_ok = m * t1 > margin;
    let lower_bound_power = (n_condition_ok && separation_condition_ok).then(|| {
        let miss = (m * c1 + tau * c2 + c3 + 0.1) / (m * t1 - margin).powi(2);
        (1.0 - miss).clamp(0.0, 1.0)
    });
    Ok(PowerBoundReport {
        t1,
        c1,
        c2,
        c3,
        c4,
        n_threshold,
        n_condition_ok,
        separation_condition_ok,
        lower_bound_power,
    })
}
