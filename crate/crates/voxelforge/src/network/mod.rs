//! Toy-scale 3D encoder-decoder with hand-derived backward passes.
//!
//! Dense 5-axis tensors, dilated 3D convolution, ResNet blocks, three
//! fusion schemes for the two-channel (surface + edge) input, weighted
//! cross-entropy, SGD with momentum, and the one-cycle schedule. Generic
//! over the scalar so gradient checks run in f64 while training runs f32.

pub mod blocks;
pub mod checkpoint;
pub mod conv;
pub mod loss;
pub mod net;
pub mod optim;
pub mod tensor;

pub use checkpoint::CheckpointError;
pub use conv::{conv3d_backward, conv3d_forward, Conv3Params, ConvGrads};
pub use loss::{labels_to_one_hot, softmax_channels, weighted_cce};
pub use net::{logits_to_labels, CompletionNet, FusionScheme, NetworkConfig};
pub use optim::{one_cycle_lr, SgdMomentum};
pub use tensor::{Scalar, Tensor5};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("tensor shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch { got: Vec<usize>, expected: Vec<usize> },
    #[error("channel count {got} does not match expected {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("kernel {0:?} must have odd positive dims")]
    BadKernel([usize; 3]),
    #[error("stride and dilation must be positive, got stride {stride} dilation {dilation}")]
    BadStrideDilation { stride: usize, dilation: usize },
    #[error("convolution output would be empty for input {input:?}")]
    EmptyOutput { input: [usize; 3] },
    #[error("input dims {0:?} must be positive and divisible by 4")]
    InvalidDims([usize; 3]),
    #[error("base channels {0} must be positive (and even for MF/LF fusion)")]
    BadBaseChannels(usize),
    #[error("class count {0} must be 12")]
    BadClassCount(usize),
    #[error("encoder dilations must be non-empty")]
    NoDilations,
    #[error("probabilities at voxel {index} sum to {sum:.6}, not a distribution")]
    NotADistribution { index: usize, sum: f64 },
    #[error("negative epoch {0}")]
    NegativeEpoch(f64),
    #[error("learning rate {0} must be positive and finite")]
    BadLearningRate(f64),
}
