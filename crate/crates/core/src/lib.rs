//! Volumetric MRI report generation: an inflated 3D vision encoder bridged
//! into a small causal language model, with training, decoding, evaluation
//! and LIME-based interpretation.

pub mod autograd;
pub mod bridge;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod langmodel;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod synth;
pub mod text;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
