//! Neuron-level analysis of a small transformer classifier: synthetic
//! corpora, activation tracing, selective-neuron localization, masking,
//! steering and activation fusion.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod localize;
pub mod mask;
pub mod par;
pub mod pipeline;
pub mod steer;
pub mod tinylm;
pub mod trace;

pub use error::{Error, Result};
