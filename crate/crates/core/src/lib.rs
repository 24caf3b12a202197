#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod hyperprior;
pub mod ias;
pub mod io;
pub mod krylov;
pub mod operators;

pub use error::{Error, Result};
