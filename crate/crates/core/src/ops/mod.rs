//! Numeric primitives shared by every model: convolution, sub-pixel
//! rearrangement, activations and batch normalization.

pub mod activation;
pub mod conv;
mod gemm;
pub mod norm;
pub mod shuffle;

pub use activation::{activation, activation_backward, Activation};
pub use conv::{
    conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward, ConvGrads, ConvSpec,
};
pub use norm::{batch_norm, BN_EPSILON, BN_MOMENTUM, batch_norm_backward, batch_norm_infer, batch_norm_train, BatchNormCache, NormMode, RunningStats};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
