pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod inpainter;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod quantizer;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Mat;
