//! Graph-contextual semantic segmentation of tiled slide images.
//!
//! The crate covers the full loop: synthetic slide generation, foreground
//! tiling, context-graph construction and aggregation, attention fusion with a
//! convolutional patch codec, deterministic training, checkpointing, and
//! stitched evaluation. A reverse-mode tape with central-difference gradient
//! checking keeps the numerics honest; everything runs in f32 for training and
//! f64 for verification.

pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod error;
pub mod fusion;
pub mod gcn;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
