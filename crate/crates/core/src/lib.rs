pub mod attention;
pub mod audio;
pub mod cli;
pub mod codec;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod hooks;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod signals;
pub mod tensor_io;

pub use error::{Error, Result};
