//! Multi-level face model fitting: an affine morphable base with learned
//! per-vertex correctives, fitted to single images by analysis-by-synthesis
//! through a point-based differentiable renderer.

pub mod energy;
pub mod error;
pub mod fitter;
pub mod gradients;
pub mod io;
pub mod landmarks;
pub mod model;
pub mod render;

pub use error::{Error, Result};
