//! Introspective perception on a synthetic stereo world.

pub mod baselines;
pub mod depth;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod gpmap;
pub mod introspect;
pub mod labeler;
pub mod rng;
pub mod simworld;
pub mod slam;
pub mod stats;

pub use error::{Error, Result};
