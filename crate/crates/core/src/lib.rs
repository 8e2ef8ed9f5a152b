pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod framing;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
pub mod transformer;
pub mod wav;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
