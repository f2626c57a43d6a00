//! Sparse coding with a Laplace prior, trained through analytic entropy-based ELBOs.

pub mod amortized;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod optim;
pub mod oracle;
pub mod special;
pub mod verify;

pub use error::{Error, Result};
