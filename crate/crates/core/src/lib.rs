pub mod checkpoint;
pub mod cli;
pub mod encoders;
pub mod evaluation;
pub mod error;
pub mod grid;
pub mod head;
pub mod image;
pub mod inference;
pub mod losses;
pub mod model;
pub mod nn;
pub mod perceptual;
pub mod provenance;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use image::{BitDepth, RasterImage};
