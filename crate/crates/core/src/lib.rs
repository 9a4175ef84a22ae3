pub mod channel;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod grouping;
pub mod numerics;
pub mod phase;
pub mod sim;

pub use error::{Error, Result};
