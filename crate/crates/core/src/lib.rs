pub mod error;
pub mod cond;
pub mod dataset;
pub mod diffusion;
pub mod edit;
pub mod eval;
pub mod image;
pub mod rng;
pub mod sbr;
pub mod tensor;

pub use error::{Error, Result};
