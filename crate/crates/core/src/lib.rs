//! N:M structured sparsity with multi-axis soft importance masks.

pub mod error;
pub mod format;
pub mod io;
pub mod mask;
pub mod nn;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
