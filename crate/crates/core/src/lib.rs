//! Mean estimation over normed spaces with statistical-query access.
//!
//! The crate simulates `STAT(τ)` and `VSTAT(t)` oracles over explicit and
//! sampled distributions, implements the coordinate-wise `ℓ∞`, random-rotation
//! `ℓ₂`, level-ring symmetric-norm and Schatten-p mean estimators, generates
//! the type-2 and Schatten lower-bound families, and checks the underlying
//! geometric properties numerically.
//!
//! Every routine is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the `*64` aliases below fix `f64`.

// Negated comparisons such as `!(x >= 0)` are used deliberately so that NaN
// inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod hard_instances;
pub mod linalg;
pub mod norms;
pub mod oracle;
pub mod scalar;

pub use error::{Error, Result};
pub use estimators::{
    estimate_mean_l2, estimate_mean_linf, estimate_mean_schatten, estimate_mean_symmetric, reconcile, ring_restrict,
    EstimateReport, RingEstimate, RingIndex,
};
pub use hard_instances::{SchattenInstanceParams, T2Mode, Type2Witness};
pub use linalg::Matrix;
pub use norms::{Norm, NormKind, NormSpec, SymmetricNorm};
pub use oracle::{
    exact_mean, Distribution, ExplicitDistribution, OracleKind, OracleSession, Perturbation, QueryFn, SamplerDistribution,
};
pub use scalar::Scalar;

pub type Norm64 = Norm<f64>;
pub type SymmetricNorm64 = SymmetricNorm<f64>;
pub type Matrix64 = Matrix<f64>;
pub type Distribution64 = Distribution<f64>;
pub type ExplicitDistribution64 = ExplicitDistribution<f64>;
pub type OracleSession64<'a> = OracleSession<'a, f64>;
pub type Perturbation64 = Perturbation<f64>;
pub type EstimateReport64 = EstimateReport<f64>;
pub type Type2Witness64 = Type2Witness<f64>;
pub type SchattenInstanceParams64 = SchattenInstanceParams<f64>;

pub type Norm32 = Norm<f32>;
pub type Distribution32 = Distribution<f32>;
pub type OracleSession32<'a> = OracleSession<'a, f32>;
