//! Weakly supervised lesion segmentation from a windowed-attention classifier.
pub mod arrays;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod maps;
pub mod method;
pub mod nn;
pub mod pipeline;
pub mod segment;
pub mod swin;
pub mod trainer;
pub mod unet;

pub use error::{Error, Result};
pub use method::Method;
