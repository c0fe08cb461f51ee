//! Binary-weight super-resolution networks.
//!
//! The crate is `no_std` (with `alloc`) and carries every numeric piece of the
//! pipeline: a small NCHW tensor engine, sign binarization with per-channel
//! scaling factors, straight-through training, the residual SR architectures,
//! a multiplication-free inference kernel, op/size accounting, image metrics
//! and Laplacian-pyramid statistics. File formats, image IO and the CLI live
//! in the `bsr` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod binary;
pub mod cost;
pub mod data;
mod error;
pub mod graph;
mod math;
pub mod model;
pub mod mulfree;
pub mod ops;
pub mod pyramid;
pub mod tensor;
pub mod train;

pub use crate::binary::{AlphaMode, BinaryConvLayer, PackedBits};
pub use crate::error::{Error, Result};
pub use crate::graph::{Layer, Network, NodeId, Region};
pub use crate::model::{Family, SrModel, SrModelConfig};
pub use crate::ops::conv::ConvSpec;
pub use crate::tensor::{Shape, Tensor};
