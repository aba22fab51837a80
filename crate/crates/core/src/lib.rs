//! Gaussian blendshape head avatars.
//!
//! A neutral set of 3D Gaussians plus per-expression Gaussian deltas is
//! initialized from a mesh blendshape model, optimized against rendered
//! frames, and animated by linear blending, skinning and splatting.

pub mod anim;
pub mod bench;
pub mod container;
pub mod dataset;
pub mod eval;
pub mod error;
pub mod gaussians;
pub mod init;
pub mod math;
pub mod metrics;
pub mod mesh;
pub mod render;
pub mod sh;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
