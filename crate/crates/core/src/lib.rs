//! Penalized quantile regression under heterogeneous sparsity.
//!
//! The crate fits linear quantile regressions at several levels jointly,
//! selecting covariates with a square-root group penalty that can zero a
//! covariate at every level or only at some of them. Baseline per-level
//! estimators (unpenalized, lasso, adaptive lasso), tuning-parameter
//! selection and a Monte-Carlo study harness are included.

pub mod error;
pub mod estimator;
pub mod hetqr;
pub mod lp;
pub mod metrics;
pub mod model;
pub mod qr_fit;
pub mod simgen;
pub mod study;
pub mod tuning;

pub use error::{Error, Result};
