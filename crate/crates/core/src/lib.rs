pub mod archive;
pub mod backbone;
pub mod cnn_path;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod mlha;
pub mod model;
pub mod nn;
pub mod third_path;

pub use error::{Error, Result};
