pub mod actor;
pub mod approximator;
pub mod cli;
pub mod critic;
pub mod encourager;
pub mod envs;
pub mod error;
pub mod replay;
pub mod trainer;
pub mod utility;

pub use error::{PacerError, Result};
