//! Anisotropic-kernel maximum mean discrepancy.
//!
//! Two-sample and k-sample tests built on an asymmetric affinity between a
//! weighted reference set (each reference carrying its own covariance) and
//! the data, with L2 and spectrally filtered statistics, permutation
//! calibration, witness functions and the accompanying power theory.

pub mod cli;
pub mod data;
pub mod error;
pub mod kernel;
pub mod ksample;
pub mod mmd;
pub mod refset;
pub mod spectral;
pub mod synthetic;
pub mod theory;
pub mod witness;

pub use data::{derive_stream, PointCloud, ReferenceSet, RngStream, SpdFactor, TestResult};
pub use error::{Error, Result};
pub use kernel::{build_affinity_matrix, eval_affinity, AffinityMatrix};
pub use mmd::{mmd_l2, mmd_spec, permutation_null, two_sample_test, SpecFilter, StatisticKind};
pub use spectral::{bandpass_filter, diffusion_filter, truncated_svd, SpectralFilter, SvdTriple};
