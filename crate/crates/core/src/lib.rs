//! Correlated random measures and variational inference for correlated
//! nonparametric Poisson factorization.

// `!(x > 0.0)` is how NaN gets rejected; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod mathfn;
pub mod model;
pub mod optim;
pub mod rmgen;

pub use error::{Error, Result};
