//! Reconstruction of marginal query answers from noisy residual and marginal
//! measurements, without materializing the full data vector.
//!
//! The numeric core ([`kron`], [`workload`], [`reconstruct`], [`evaluate`]) is
//! generic over [`Scalar`]; the aliases below fix it to `f64`, which is what
//! the private mechanisms and the CLI use.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dense;
pub mod error;
pub mod evaluate;
pub mod kron;
pub mod lnn;
pub mod mechanisms;
pub mod oracle;
pub mod privacy;
pub mod reconstruct;
pub mod scalar;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type KronOp = kron::KronOperator<f64>;
pub type Factor = kron::FactorKind<f64>;
pub type Marginal = workload::MarginalTable<f64>;
pub type Residual = workload::ResidualVector<f64>;
pub type Operators = workload::OperatorCache<f64>;
pub type MarginalMeas = reconstruct::MarginalMeasurement<f64>;
pub type ResidualMeas = reconstruct::ResidualMeasurement<f64>;
pub type Reconstructed = reconstruct::Reconstruction<f64>;
