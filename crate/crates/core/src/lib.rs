pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod rankdata;
pub mod ranker;
pub mod resize;
pub mod srgan;

pub use error::{Error, Result};
pub use image::Image;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
