pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod ot;
pub mod posthoc;
pub mod report;
pub mod train;

pub use error::{Error, Result};
