//! Learning autonomous ODE right-hand sides from trajectory data.
//!
//! Three field representations share one training pipeline: arbitrary
//! polynomial chaos expansions ([`apce`]), Gaussian kernel collocation
//! ([`kernel`]) and small tanh networks ([`neural`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod apce;
pub mod data;
pub mod error;
pub mod integrate;
pub mod kernel;
pub mod linalg;
pub mod neural;
pub mod optimize;
pub mod pipeline;
pub mod rhs;
pub mod scalar;

pub use data::ObservationSet;
pub use error::{Error, Result};
pub use rhs::{BoundRhs, Rhs};
pub use scalar::{Dual, Dual8, Scalar};
