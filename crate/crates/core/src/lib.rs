//! Generative hierarchical dialogue models built on a small tape-based
//! autodiff engine: a GRU language-model baseline, HRED, VHRED and MrRNN,
//! with their training objectives, decoders and evaluation metrics.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod params;
pub mod rnn;
pub mod corpus;
pub mod coarse;
pub mod models;
pub mod training;
pub mod generation;
pub mod evaluation;
