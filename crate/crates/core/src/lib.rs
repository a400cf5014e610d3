//! Multiscale similarity and geographically weighted regression.
//!
//! Local regressions are weighted by a convex mix of an adaptive bi-square
//! geographic kernel and an attribute-similarity kernel. The multiscale
//! model calibrates one bandwidth and one mixing weight per covariate by
//! backfitting; OLS, GWR, SGWR and MGWR are available for comparison.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod io;
mod linalg;
pub mod local_fit;
pub mod model_selection;
pub mod simulation;
pub mod weights;

pub use error::{MsgwrError, Result};
pub use estimators::{fit, FitConfig, FitResult, ModelKind, SpatialContext};
pub use local_fit::Dataset;
