//! Object counting from point annotations.
//!
//! The crate turns per-image point (and optional box) annotations into the
//! three supervision signals used by density-based counting networks:
//!
//! - a density map whose integral is the object count,
//! - a binary segmentation map marking pixels close to an annotation,
//! - a quantized global-density level per image or patch.
//!
//! On top of that it provides the focal and regression losses with analytic
//! gradients, a small reverse-mode autodiff engine, a toy three-branch focus
//! network with its trainer, the usual counting metrics and a deterministic
//! synthetic scene generator.

pub mod autograd;
pub mod error;
pub mod focusnet;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod supervision;
pub mod synth;

pub use error::{Error, Result};
