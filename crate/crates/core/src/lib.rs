//! Music-to-long-dance generation.
//!
//! The pipeline runs in two stages. A token codebook and an autoregressive
//! sequence model lay out a coarse global choreography; dance primitives
//! extracted from it then steer a residual-shifting diffusion sampler that
//! fills in full-body motion, one segment per worker, stitched at shared
//! boundary windows.

pub mod body;
pub mod choreo;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod music;
pub mod nn;
pub mod pddm;
pub mod pipeline;
pub mod vq;

pub use error::{Error, Result};
