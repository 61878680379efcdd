//! Vector-graphic stroke tokenization: SVG simplification, a residual
//! vector-quantized convolutional codec over command matrices, a
//! keyword-conditioned stroke language model, connectivity repair,
//! rasterization and evaluation metrics.

pub mod cli;
pub mod config;
pub mod fixer;
pub mod lm;
pub mod matrix;
pub mod metrics;
pub mod render;
pub mod svg;
pub mod tensor;
pub mod vq;
