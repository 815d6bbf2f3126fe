//! Tensor message-passing energy model with attribute scaling.

pub mod config;
pub mod network;
pub mod params;

#[cfg(test)]
mod tests;

pub use config::{AttributeMode, ModelConfig};
pub use network::{cosine_cutoff, radial_weights, Batch, Forward, Model, Prediction, RadialBasis, Sabotage};
pub use params::ModelParams;
