//! One-stage temporal action detection with a scalable-granularity
//! perception (SGP) feature pyramid and a Trident boundary head, plus a
//! suite of numerical diagnostics for the rank-loss argument.
//!
//! The pipeline is:
//!
//! 1. [`pyramid`] embeds a `T×D` feature sequence and builds an SGP
//!    pyramid whose level `l` has stride `2^(l−1)`;
//! 2. [`heads`] predicts class logits and, per instant, two boundary
//!    distributions over `B + 1` relative bins;
//! 3. [`assign`] and [`loss`] turn ground truth into targets and the
//!    training objective;
//! 4. [`inference`] decodes and deduplicates detections, and [`eval`]
//!    scores them with mAP.

pub mod assign;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod diagnostics;
mod error;
pub mod eval;
pub mod heads;
pub mod inference;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod pyramid;
pub mod sequence;
pub mod sgp;
pub mod train;

pub use error::{Error, Result};
pub use tridet_autograd as autograd;
