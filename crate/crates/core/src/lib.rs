pub mod error;
pub mod motion;
pub mod nn;
pub mod rvq;
pub mod disentangle;
pub mod codec;
pub mod ops;
pub mod eval;

pub use error::{Error, Result};
