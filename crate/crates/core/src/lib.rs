// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datasets;
pub mod dp;
pub mod error;
pub mod fed_sim;
pub mod grad;
pub mod models;
pub mod reports;
pub mod selection;
pub mod rng;

pub use error::{Error, Result};
