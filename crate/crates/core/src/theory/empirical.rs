//! Monte-Carlo power of permutation tests on simulated two-sample problems.

use rayon::prelude::*;

use crate::data::{PointCloud, ReferenceSet, RngStream};
use crate::error::{Error, Result};
use crate::mmd::{gram_two_sample_test, two_sample_test, StatisticKind};
use crate::synthetic::PointSampler;

use super::kernels::{GaussianKernel, SymmetricKernel};

/// Repeated draws of `X ~ p` (size `n1`) and `Y ~ q` (size `n2`). Trial `t`
/// draws its data from `substream(t).substream(0)` and permutes with
/// `substream(t).substream(1)`, so every method sees the same datasets.
pub struct PowerStudy<'a> {
    pub p: &'a dyn PointSampler,
    pub q: &'a dyn PointSampler,
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    pub n_boot: usize,
    pub trials: usize,
}

impl PowerStudy<'_> {
    fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::invalid("sample sizes must be positive"));
        }
        Ok(())
    }

    pub fn data(&self, trial: usize, rng: &RngStream) -> Result<(PointCloud, PointCloud)> {
        let mut r = rng.substream(trial as u64).substream(0);
        let x = self.p.sample(self.n1, &mut r)?;
        let y = self.q.sample(self.n2, &mut r)?;
        Ok((x, y))
    }

    fn rate(&self, rng: &RngStream, one: impl Fn(usize, &RngStream) -> Result<bool> + Sync) -> Result<f64> {
        self.check()?;
        let rejections = (0..self.trials)
            .into_par_iter()
            .map(|t| one(t, &rng.substream(t as u64).substream(1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(rejections.iter().filter(|&&r| r).count() as f64 / self.trials as f64)
    }

    /// Rejection rate of the reference-set test.
    pub fn anisotropic(&self, refset: &ReferenceSet, kind: &StatisticKind, rng: &RngStream) -> Result<f64> {
        self.rate(rng, |t, perm| {
            let (x, y) = self.data(t, rng)?;
            Ok(two_sample_test(&x, &y, refset, kind, self.alpha, self.n_boot, perm)?.reject)
        })
    }

    /// Rejection rate of the permutation MMD test with any symmetric kernel.
    pub fn kernel(&self, kernel: &dyn SymmetricKernel, rng: &RngStream) -> Result<f64> {
        self.rate(rng, |t, perm| {
            let (x, y) = self.data(t, rng)?;
            let xy = x.concat(&y)?;
            let gram = kernel.gram(&xy, &xy)?;
            Ok(gram_two_sample_test(&gram, self.n1, self.alpha, self.n_boot, perm)?.reject)
        })
    }

    /// Rejection rate of the isotropic Gaussian kernel at each bandwidth.
    pub fn gaussian_grid(&self, bandwidths: &[f64], rng: &RngStream) -> Result<Vec<f64>> {
        bandwidths
            .iter()
            .map(|&eps| {
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(Error::invalid(format!("bandwidth must be positive, got {eps}")));
                }
                self.kernel(&GaussianKernel { eps }, rng)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_stream, SpdFactor};
    use crate::synthetic::ArcDistribution;

    #[test]
    fn shared_datasets_and_thread_invariance() {
        let p = ArcDistribution {
            radius: 1.0,
            eps_x: 0.05,
        };
        let q = ArcDistribution {
            radius: 0.7,
            eps_x: 0.05,
        };
        let study = PowerStudy {
            p: &p,
            q: &q,
            n1: 100,
            n2: 80,
            alpha: 0.05,
            n_boot: 50,
            trials: 8,
        };
        let rng = derive_stream(3, 0);
        assert_eq!(study.data(2, &rng).unwrap(), study.data(2, &rng).unwrap());
        let refs = p.sample(10, &mut derive_stream(4, 0)).unwrap();
        let rs = ReferenceSet::with_shared_covariance(refs, SpdFactor::isotropic(2, 0.05).unwrap()).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        study.anisotropic(&rs, &StatisticKind::L2, &rng).unwrap(),
                        study.gaussian_grid(&[0.1, 0.3], &rng).unwrap(),
                    )
                })
        };
        let a = run(1);
        assert_eq!(a, run(3));
        assert!(a.0 > 0.5 && a.1.iter().all(|&v| v > 0.5), "{a:?}");
        assert!(study.gaussian_grid(&[0.0], &rng).is_err());
    }
}
