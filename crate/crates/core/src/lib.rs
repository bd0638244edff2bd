//! Recurrent sequence classification from partial sequences.
//!
//! A single-layer LSTM reads per-frame feature vectors and predicts a class
//! after every frame. Training combines a sequence-level cross-entropy (E1),
//! a per-frame intensity regression against estimated intensities (E2) and a
//! perceived-cluster hinge on the hidden features (E3), so that predictions
//! made from short prefixes already agree with the full-sequence label.

pub mod cli;
pub mod clustering;
pub mod dd;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod intensity;
pub mod lstm;
pub mod math;
pub mod objectives;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
