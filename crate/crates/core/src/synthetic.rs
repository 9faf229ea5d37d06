//! Seeded generators for the synthetic experiments: a noisy quarter circle,
//! a three-component Gaussian mixture in 3-D, and a 2-D diffusion-tensor grid.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Matrix3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{PointCloud, ReferenceSet, RngStream, SpdFactor};
use crate::error::{Error, Result};
use crate::kernel::DiffusionTensorPixel;

/// A distribution that can be sampled one point at a time.
pub trait PointSampler: Sync {
    fn dim(&self) -> usize;

    /// Write one draw into `out` (length `dim()`).
    fn draw(&self, rng: &mut RngStream, out: &mut [f64]);

    fn sample(&self, n: usize, rng: &mut RngStream) -> Result<PointCloud> {
        let d = self.dim();
        let mut data = vec![0.0; n * d];
        for row in data.chunks_exact_mut(d) {
            self.draw(rng, row);
        }
        PointCloud::new(data, n, d)
    }
}

impl<S: PointSampler + ?Sized> PointSampler for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn draw(&self, rng: &mut RngStream, out: &mut [f64]) {
        (**self).draw(rng, out)
    }
}

/// Uniform on `{radius·(cos πt/2, sin πt/2) : t ∈ [0,1]}` plus `N(0, ε_x² I₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcDistribution {
    pub radius: f64,
    pub eps_x: f64,
}

impl PointSampler for ArcDistribution {
    fn dim(&self) -> usize {
        2
    }

    fn draw(&self, rng: &mut RngStream, out: &mut [f64]) {
        let theta = FRAC_PI_2 * rng.random::<f64>();
        let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        out[0] = self.radius * theta.cos() + self.eps_x * nx;
        out[1] = self.radius * theta.sin() + self.eps_x * ny;
    }
}

/// Three equal-weight Gaussians centered at `e_c + δ·e_{c+1}` with variance
/// `(1/3)²` along `e_c` and `ε_x²` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMixture3 {
    pub delta: f64,
    pub eps_x: f64,
}

impl GaussianMixture3 {
    pub fn mean(&self, component: usize) -> [f64; 3] {
        let mut m = [0.0; 3];
        m[component] = 1.0;
        m[(component + 1) % 3] = self.delta;
        m
    }

    pub fn std_devs(&self, component: usize) -> [f64; 3] {
        let mut s = [self.eps_x; 3];
        s[component] = 1.0 / 3.0;
        s
    }
}

impl GaussianMixture3 {
    /// Attach to each point the covariance `σ̃²·diag(std_devs(c)²)` of the
    /// component `c` whose axis it lies along (its largest coordinate).
    pub fn component_reference_set(&self, points: &PointCloud, sigma_tilde: f64) -> Result<ReferenceSet> {
        if points.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: points.dim(),
            });
        }
        if !(sigma_tilde > 0.0 && sigma_tilde.is_finite()) {
            return Err(Error::invalid("sigma_tilde must be positive"));
        }
        let covs = points
            .points()
            .map(|r| {
                let c = (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap_or(0);
                let v: Vec<f64> = self.std_devs(c).iter().map(|s| (sigma_tilde * s).powi(2)).collect();
                SpdFactor::diagonal(&v)
            })
            .collect::<Result<Vec<_>>>()?;
        ReferenceSet::uniform(points.clone(), covs)
    }
}

impl PointSampler for GaussianMixture3 {
    fn dim(&self) -> usize {
        3
    }

    fn draw(&self, rng: &mut RngStream, out: &mut [f64]) {
        let c = rng.random_range(0..3);
        let (m, s) = (self.mean(c), self.std_devs(c));
        for k in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            out[k] = m[k] + s[k] * z;
        }
    }
}

/// `(1−τ)·base + τ·alt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contaminated<P, Q> {
    pub base: P,
    pub alt: Q,
    pub tau: f64,
}

impl<P: PointSampler, Q: PointSampler> PointSampler for Contaminated<P, Q> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn draw(&self, rng: &mut RngStream, out: &mut [f64]) {
        if rng.random::<f64>() < self.tau {
            self.alt.draw(rng, out)
        } else {
            self.base.draw(rng, out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePairConfig {
    pub n1: usize,
    pub n2: usize,
    pub delta: f64,
    pub eps_x: f64,
}

impl CurvePairConfig {
    pub fn new(n1: usize, n2: usize, delta: f64) -> Self {
        Self {
            n1,
            n2,
            delta,
            eps_x: 0.02,
        }
    }

    pub fn p(&self) -> ArcDistribution {
        ArcDistribution {
            radius: 1.0,
            eps_x: self.eps_x,
        }
    }

    pub fn q(&self) -> ArcDistribution {
        ArcDistribution {
            radius: 1.0 - self.delta,
            eps_x: self.eps_x,
        }
    }
}

fn check_sizes(n1: usize, n2: usize, eps_x: f64) -> Result<()> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("sample sizes must be positive"));
    }
    if !(eps_x >= 0.0) {
        return Err(Error::invalid("eps_x must be nonnegative"));
    }
    Ok(())
}

/// X from the unit arc, Y from the arc of radius `1 − δ`, both blurred by `ε_x`.
pub fn gen_curve_pair(config: &CurvePairConfig, rng: &mut RngStream) -> Result<(PointCloud, PointCloud)> {
    check_sizes(config.n1, config.n2, config.eps_x)?;
    if !(0.0..1.0).contains(&config.delta) {
        return Err(Error::invalid(format!("delta must lie in [0,1), got {}", config.delta)));
    }
    let x = config.p().sample(config.n1, rng)?;
    let y = config.q().sample(config.n2, rng)?;
    Ok((x, y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixturePairConfig {
    pub n1: usize,
    pub n2: usize,
    pub delta: f64,
    pub eps_x: f64,
}

impl MixturePairConfig {
    pub fn new(n1: usize, n2: usize, delta: f64) -> Self {
        Self {
            n1,
            n2,
            delta,
            eps_x: 0.02,
        }
    }

    pub fn p(&self) -> GaussianMixture3 {
        GaussianMixture3 {
            delta: 0.0,
            eps_x: self.eps_x,
        }
    }

    pub fn q(&self) -> GaussianMixture3 {
        GaussianMixture3 {
            delta: self.delta,
            eps_x: self.eps_x,
        }
    }
}

pub fn gen_mixture_pair(config: &MixturePairConfig, rng: &mut RngStream) -> Result<(PointCloud, PointCloud)> {
    check_sizes(config.n1, config.n2, config.eps_x)?;
    if !(config.delta >= 0.0) {
        return Err(Error::invalid("delta must be nonnegative"));
    }
    let x = config.p().sample(config.n1, rng)?;
    let y = config.q().sample(config.n2, rng)?;
    Ok((x, y))
}

/// Half-open index rectangle `[x0, x1) × [y0, y1)` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl GridBox {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.x0..self.x1).contains(&i) && (self.y0..self.y1).contains(&j)
    }
}

/// In-plane tensors `R(θ) diag(m, m/e) R(θ)ᵀ` with magnitude `m` and angle
/// `θ` ramping linearly from left to right, eccentricity `e`, and a constant
/// diffusivity along z. Inside the anomaly box the eccentricity drops by
/// `eccentricity_gap`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGridConfig {
    pub side: usize,
    pub anomaly: Option<GridBox>,
    pub noise_sigma: f64,
    pub eccentricity: f64,
    pub eccentricity_gap: f64,
    pub magnitude: (f64, f64),
    pub angle: (f64, f64),
    pub z_diffusivity: f64,
}

impl TensorGridConfig {
    pub fn new(side: usize) -> Self {
        Self {
            side,
            anomaly: None,
            noise_sigma: 0.0,
            eccentricity: 4.0,
            eccentricity_gap: 2.0,
            magnitude: (2.0, 1.0),
            angle: (0.0, FRAC_PI_2),
            z_diffusivity: 0.5,
        }
    }
}

/// Ratio of the two in-plane eigenvalues (major over minor).
pub fn tensor_eccentricity(t: &Matrix3<f64>) -> f64 {
    let block = Matrix2::new(t[(0, 0)], t[(0, 1)], t[(1, 0)], t[(1, 1)]);
    let ev = block.symmetric_eigenvalues();
    let (hi, lo) = (ev[0].max(ev[1]), ev[0].min(ev[1]));
    hi / lo
}

/// `side × side` grid of tensors, row-major in `(i = column, j = row)` with
/// pixel location `(i, j)`. Noise perturbs log-magnitude, log-eccentricity and
/// angle, so every tensor stays positive definite.
pub fn gen_tensor_grid(config: &TensorGridConfig, rng: &mut RngStream) -> Result<Vec<DiffusionTensorPixel>> {
    let c = config;
    if c.side < 2 {
        return Err(Error::invalid("side must be at least 2"));
    }
    if !(c.eccentricity > 0.0 && c.magnitude.0 > 0.0 && c.magnitude.1 > 0.0 && c.z_diffusivity > 0.0) {
        return Err(Error::invalid(
            "eccentricity, magnitudes and z diffusivity must be positive",
        ));
    }
    if !(c.noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma must be nonnegative"));
    }
    if c.anomaly.is_some() && !(c.eccentricity - c.eccentricity_gap > 0.0) {
        return Err(Error::invalid("eccentricity gap leaves a nonpositive eccentricity"));
    }
    let lerp = |(a, b): (f64, f64), i: usize| a + (b - a) * i as f64 / (c.side - 1) as f64;
    let noise = |rng: &mut RngStream| -> f64 {
        if c.noise_sigma > 0.0 {
            c.noise_sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(c.side * c.side);
    for j in 0..c.side {
        for i in 0..c.side {
            let ecc = match c.anomaly {
                Some(b) if b.contains(i, j) => c.eccentricity - c.eccentricity_gap,
                _ => c.eccentricity,
            };
            let mag = (lerp(c.magnitude, i).ln() + noise(rng)).exp();
            let ecc = (ecc.ln() + noise(rng)).exp();
            let theta = lerp(c.angle, i) + noise(rng);
            let (s, co) = theta.sin_cos();
            let (l1, l2) = (mag, mag / ecc);
            let t = Matrix3::new(
                co * co * l1 + s * s * l2,
                co * s * (l1 - l2),
                0.0,
                co * s * (l1 - l2),
                s * s * l1 + co * co * l2,
                0.0,
                0.0,
                0.0,
                c.z_diffusivity,
            );
            out.push(DiffusionTensorPixel {
                location: vec![i as f64, j as f64],
                tensor: t,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::derive_stream;

    #[test]
    fn component_covariances_follow_axes() {
        let m = GaussianMixture3 {
            delta: 0.0,
            eps_x: 0.02,
        };
        let pts = PointCloud::from_rows(&[[0.9, 0.01, -0.02], [0.0, 0.1, 1.3]]).unwrap();
        let rs = m.component_reference_set(&pts, 2.0).unwrap();
        let a = rs.covariances()[0].matrix();
        assert!((a[(0, 0)] - 4.0 / 9.0).abs() < 1e-12 && (a[(1, 1)] - 0.0016).abs() < 1e-12);
        let b = rs.covariances()[1].matrix();
        assert!((b[(2, 2)] - 4.0 / 9.0).abs() < 1e-12 && (b[(0, 0)] - 0.0016).abs() < 1e-12);
    }

    #[test]
    fn noiseless_curve_on_circle() {
        let cfg = CurvePairConfig {
            n1: 50,
            n2: 40,
            delta: 0.0,
            eps_x: 0.0,
        };
        let (x, y) = gen_curve_pair(&cfg, &mut derive_stream(1, 0)).unwrap();
        assert_eq!((x.len(), y.len()), (50, 40));
        for p in x.points().chain(y.points()) {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-14);
            assert!(p[0] >= -1e-15 && p[1] >= -1e-15);
        }
    }

    #[test]
    fn shifted_curve_radius() {
        let cfg = CurvePairConfig {
            n1: 5,
            n2: 30,
            delta: 0.1,
            eps_x: 0.0,
        };
        let (_, y) = gen_curve_pair(&cfg, &mut derive_stream(2, 0)).unwrap();
        for p in y.points() {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 0.9).abs() < 1e-14);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = CurvePairConfig::new(30, 30, 0.02);
        let a = gen_curve_pair(&cfg, &mut derive_stream(9, 0)).unwrap();
        let b = gen_curve_pair(&cfg, &mut derive_stream(9, 0)).unwrap();
        assert_eq!(a, b);
        let m = MixturePairConfig::new(30, 30, 0.02);
        let a = gen_mixture_pair(&m, &mut derive_stream(9, 0)).unwrap();
        let b = gen_mixture_pair(&m, &mut derive_stream(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs() {
        let mut rng = derive_stream(0, 0);
        assert!(gen_curve_pair(&CurvePairConfig::new(0, 3, 0.0), &mut rng).is_err());
        assert!(gen_curve_pair(&CurvePairConfig::new(3, 3, 1.0), &mut rng).is_err());
        assert!(gen_mixture_pair(&MixturePairConfig::new(3, 3, -0.1), &mut rng).is_err());
        assert!(gen_tensor_grid(&TensorGridConfig::new(1), &mut rng).is_err());
    }

    #[test]
    fn mixture_means_shift_cyclically() {
        let q = GaussianMixture3 {
            delta: 0.5,
            eps_x: 0.02,
        };
        assert_eq!(q.mean(0), [1.0, 0.5, 0.0]);
        assert_eq!(q.mean(1), [0.0, 1.0, 0.5]);
        assert_eq!(q.mean(2), [0.5, 0.0, 1.0]);
        assert_eq!(q.std_devs(1), [0.02, 1.0 / 3.0, 0.02]);
    }

    #[test]
    fn contamination_extremes() {
        let p = ArcDistribution {
            radius: 1.0,
            eps_x: 0.0,
        };
        let q = ArcDistribution {
            radius: 0.5,
            eps_x: 0.0,
        };
        let all_q = Contaminated {
            base: p,
            alt: q,
            tau: 1.0,
        }
        .sample(20, &mut derive_stream(3, 0))
        .unwrap();
        assert!(all_q
            .points()
            .all(|v| ((v[0] * v[0] + v[1] * v[1]).sqrt() - 0.5).abs() < 1e-14));
        let all_p = Contaminated {
            base: p,
            alt: q,
            tau: 0.0,
        }
        .sample(20, &mut derive_stream(3, 0))
        .unwrap();
        assert!(all_p
            .points()
            .all(|v| ((v[0] * v[0] + v[1] * v[1]).sqrt() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn noiseless_grid_has_base_eccentricity() {
        let cfg = TensorGridConfig::new(6);
        let grid = gen_tensor_grid(&cfg, &mut derive_stream(4, 0)).unwrap();
        assert_eq!(grid.len(), 36);
        for px in &grid {
            assert!(px.tensor.symmetric_eigenvalues().iter().all(|&v| v > 0.0));
            assert!((tensor_eccentricity(&px.tensor) - 4.0).abs() < 1e-10);
        }
        // Magnitude decreases left to right.
        assert!(grid[0].tensor.trace() > grid[5].tensor.trace());
    }

    #[test]
    fn anomaly_box_lowers_eccentricity_by_gap() {
        let mut cfg = TensorGridConfig::new(8);
        cfg.anomaly = Some(GridBox {
            x0: 2,
            x1: 5,
            y0: 3,
            y1: 6,
        });
        let grid = gen_tensor_grid(&cfg, &mut derive_stream(5, 0)).unwrap();
        let (mut inside, mut outside) = (vec![], vec![]);
        for px in &grid {
            let (i, j) = (px.location[0] as usize, px.location[1] as usize);
            let e = tensor_eccentricity(&px.tensor);
            if cfg.anomaly.unwrap().contains(i, j) {
                inside.push(e)
            } else {
                outside.push(e)
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert_eq!(inside.len(), 9);
        assert!((mean(&outside) - mean(&inside) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn noisy_grid_stays_positive_definite() {
        let mut cfg = TensorGridConfig::new(20);
        cfg.noise_sigma = 0.05;
        cfg.anomaly = Some(GridBox {
            x0: 5,
            x1: 9,
            y0: 5,
            y1: 9,
        });
        let grid = gen_tensor_grid(&cfg, &mut derive_stream(6, 0)).unwrap();
        for px in &grid {
            assert!((px.tensor - px.tensor.transpose()).amax() < 1e-15);
            assert!(px.tensor.symmetric_eigenvalues().iter().all(|&v| v > 0.0));
        }
    }
}
