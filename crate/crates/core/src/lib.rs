pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use config::{ExperimentConfig, Overrides};
pub use error::{Error, Result};
pub use image::Image;
pub use tensor::{DType, Element, Mode, Tensor};
