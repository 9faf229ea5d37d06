//! Power theory for the reference-set statistics: spectra of the centered
//! kernel, limit laws of `n·T_n`, a finite-sample power bound and a kernel
//! comparison harness.

pub mod compare;
pub mod empirical;
pub mod kernels;
pub mod limits;
pub mod power;
pub mod spectrum;

pub use compare::{kernel_comparison, ArcKernels, ComparisonConfig, ComparisonReport};
pub use empirical::PowerStudy;
pub use kernels::{FilteredKernel, GaussianKernel, ReferenceKernel, SymmetricKernel};
pub use limits::{limit_distribution, LimitRegime};
pub use power::{power_lower_bound, PowerBoundReport};
pub use spectrum::{centered_spectrum, estimate_centered_spectrum, CenteredEigensystem, LimitSpectrum, SpectrumConfig};
