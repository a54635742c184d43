pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod data;
pub mod disentangler;
pub mod distributions;
pub mod encoder;
pub mod eval;
pub mod mrc;
pub mod nn;
pub mod pipeline;
