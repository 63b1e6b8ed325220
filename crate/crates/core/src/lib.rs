//! Tests for separability (Kronecker structure) of the covariance of matrix-valued data.
//!
//! The norm test and the Wald test stay valid under matrix elliptical laws with
//! finite fourth moments; the Gaussian likelihood ratio test is included for contrast.

pub mod error;
pub mod kron;
pub mod covariance;
pub mod moments;
pub mod null_dist;
pub mod separability;
pub mod samplers;
pub mod harness;

pub use covariance::{flip_flop_mle, ComparisonMatrix, FlipFlopOptions, MatrixSample, SeparableFit};
pub use error::{Result, SeparError};
pub use harness::dataset::{read_dataset, write_dataset};
pub use harness::simulation::{run_simulation, Nu, RejectionRow, RejectionTable, SimulationConfig};
pub use harness::verify::{run_verification, Suite, VerificationReport};
pub use kron::{wald_geometry, DenseMatrix, WaldGeometry};
pub use moments::{moment_estimates, MomentEstimates, SphericalMoments};
pub use null_dist::{mixture_sf, norm_test_dfs, wald_df, MixtureSpec};
pub use samplers::{CoreSpec, ModelSpec};
pub use separability::{
    lrt_test, norm_test, run_tests, wald_test, Diagnostics, Method, NullLaw, TestConfig, TestReport,
};
