//! Synthetic slide corpus: generation, thresholding, tiling and persistence.

pub mod dataset;
pub mod generate;
pub mod otsu;
pub mod tile;
