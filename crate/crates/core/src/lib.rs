//! Variance-reduced stochastic proximal point method whose subproblems are
//! solved in the dual by a semismooth Newton method, plus the baselines,
//! data tools and diagnostics used to compare it.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod monitor;
pub mod regularizers;
pub mod subsolver;

pub use error::{Error, Result};
pub use losses::LossFamily;
pub use model::{PrimalPoint, Problem};
pub use regularizers::Regularizer;
