//! Single-shot road graph extraction from overhead imagery.
//!
//! A convolutional stem reduces the image to a grid with one cell per
//! [`STRIDE`] × [`STRIDE`] pixels. Each cell predicts whether it holds a road
//! junction and where inside the cell it lies. A message-passing network over
//! the detected junctions then scores every junction pair as a road link.

pub mod error;
pub mod extractor;
pub mod geograph;
pub mod gridenc;
pub mod inferpipe;
pub mod metrics;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

/// Pixels per grid cell along each axis.
pub const STRIDE: usize = 32;
