pub mod audio;
pub mod autodiff;
pub mod ccc;
pub mod cli;
pub mod data;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod noisebank;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
