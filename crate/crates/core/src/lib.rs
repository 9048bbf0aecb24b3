//! Monocular 3D detection toolkit.
//!
//! Covers the numerical core of a one-stage monocular 3D detector: box
//! geometry and orientation codecs, the marginalized GIoU overlap, 3D-aware
//! label assignment, training losses including quality/importance-weighted
//! feature distillation, confidence-gated sparse head inference with a dense
//! reference path, and KITTI-style AP evaluation.

pub mod assign;
pub mod dataio;
pub mod distill;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod infer;
pub mod losses;
pub mod mgiou;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
