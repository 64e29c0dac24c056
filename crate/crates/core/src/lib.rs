//! Model averaging for high quantiles of the generalized extreme value
//! distribution.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod gev;
pub mod intervals;
pub mod lmoments;
pub mod method;
pub mod optim;
pub mod rng;
pub mod sim;
pub mod special;
pub mod surrogate;
pub mod uncertainty;

pub use error::{GevError, Result};
pub use gev::GevParams;
