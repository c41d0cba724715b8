//! Layer-wise relevance propagation for small feedforward ConvNets.
//!
//! - [`tensor`], [`layer`], [`network`]: tensors, layer definitions and the
//!   forward pass with activation recording
//! - [`model_io`]: JSON manifest + `f32` blob model files
//! - [`lrp`]: epsilon and alpha-beta relevance passes, conservation checks
//! - [`backprop`], [`train`], [`data`]: gradients and transfer retraining
//! - [`occlusion`]: occlusion sensitivity against heatmap relevance
//! - [`render`]: diverging-colormap heatmap images
//! - [`toy`]: synthetic brightness dataset and base model

pub mod backprop;
pub mod data;
pub mod error;
pub mod layer;
pub mod lrp;
pub mod model_io;
pub mod network;
pub mod occlusion;
pub mod render;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use layer::{Conv2d, Dense, Layer, MaxPool2d};
pub use lrp::{
    check_conservation, explain, redistribute_linear, redistribute_maxpool, relprop, renormalize,
    BiasPolicy, ConservationReport, LrpConfig, OneSided, RelevanceMap, Rule, ZMatrix,
};
pub use network::{ActivationTrace, Network};
pub use tensor::Tensor;
