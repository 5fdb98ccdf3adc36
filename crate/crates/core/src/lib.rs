//! Speech- and transcript-driven 3D face-mesh animation.
//!
//! Audio becomes per-frame log-mel features, a word alignment plus word
//! vectors becomes per-frame text features, and the network in [`model`]
//! regresses per-vertex offsets from both. [`train`], [`eval`] and [`synth`]
//! cover optimisation, region/correlation analysis and a synthetic corpus.

mod binio;
pub mod audio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod model;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
