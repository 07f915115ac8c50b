//! Parameter estimation for Gaussian and product-exponential distributions
//! observed only through an unknown survival set.
//!
//! The crate is organised bottom-up:
//!
//! * [`expfam`]: natural parameters, sufficient statistics, densities and samplers.
//! * [`truncation`]: survival sets, rejection sampling and Monte-Carlo mass estimates.
//! * [`preprocess`]: whitening transforms and the convex parameter domains with projections.
//! * [`setlearn`]: learners for boxes, halfspaces and polynomial threshold sets.
//! * [`pmle`]: moment-matching initialisation and projected SGD on the truncated likelihood.
//! * [`pipeline`]: end-to-end estimators, including truncated linear regression.
//! * [`metrics`]: truncated-normal analytics, divergences, bridges and bound checks.
//! * [`verify`]: the named check suite used by the command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod data;
pub mod error;
pub mod expfam;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod pmle;
pub mod poly;
pub mod preprocess;
pub mod quad;
pub mod rng;
pub mod setlearn;
pub mod truncation;
pub mod verify;

pub use data::SampleMatrix;
pub use error::{Error, Result};
pub use expfam::{FamilyKind, MeanCov, MomentVector, NaturalParams};
pub use pipeline::{EstimationReport, PipelineConfig, RegressionReport, SetClass};
pub use pmle::{Averaging, PsgdConfig, PsgdTrace};
pub use preprocess::{AffineTransform, DomainConstants, DomainKind, ParameterDomain};
pub use truncation::{MassEstimate, SurvivalSet};
