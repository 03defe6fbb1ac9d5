//! Simulation benchmark for variable and function selection in correlated
//! chemical-exposure mixtures.
//!
//! The crate covers the full pipeline: ingesting raw exposure tables,
//! fitting an elliptical copula with kernel-smoothed marginals, generating
//! replicated synthetic datasets under linear and non-linear
//! exposure–response shapes, running four selection methods (lasso, kernel
//! machine regression, additive regression trees, spike–slab additive
//! regression) plus an oracle GAM, and scoring them on selection and
//! curve-estimation accuracy.

pub mod bart;
pub mod bkmr;
pub mod copula;
pub mod dgp;
pub mod error;
pub mod ingest;
pub mod lasso;
pub mod linalg;
pub mod method;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod shapes;
pub mod special;
pub mod splines;
pub mod ssgam;
pub mod stats;

pub use error::{Error, Result};
