//! Self-supervised reconstruction pipeline for pixel-wise defect
//! localization on high-resolution circuit-board imagery.
//!
//! The pipeline trains a small encoder/dual-decoder network on procedurally
//! generated normal boards, corrupting patches on the fly and learning to
//! restore them. At inference an image is tiled into half-stride overlapping
//! patches, each patch is reconstructed behind a learned spatial gate, the
//! patches are merged cell-by-cell, and the per-pixel deviation from the
//! input becomes the anomaly heatmap.

pub mod error;
pub mod imaging;
pub mod losses;
pub mod model;
pub mod nnet;
pub mod rops;
pub mod synthboard;

pub use error::{Error, Result};
