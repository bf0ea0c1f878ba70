pub mod autoencoder;
pub mod data;
pub mod error;
pub mod flow;
pub mod imageops;
pub mod par;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub mod features;
pub mod inference;
pub mod dataset;
pub mod synth;
pub mod pipeline;
pub mod eval;
pub mod stages;
