//! Low-bitrate predictive coding of speech feature streams.
//!
//! Frames are described by an 18-band Bark cepstrum plus pitch. A recurrent
//! predictor forecasts each frame from the decoder-side reconstruction of
//! the previous one, and only the residual is quantized and entropy coded.

pub mod cli;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod featfile;
pub mod features;
pub mod grid;
pub mod lpc;
pub mod pipeline;
pub mod pitch;
pub mod predictor;
pub mod quantization;
pub mod training;

pub use error::{Error, Result};
