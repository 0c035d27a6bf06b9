pub mod ablation;
pub mod cli;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod salience;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
