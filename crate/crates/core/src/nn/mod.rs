//! Minimal differentiable tensor engine: exactly the layers the segmentation
//! networks need, each with a hand-written backward pass.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod ops;
mod optim;
mod real;
mod tensor;

pub use layers::{CenterCrop, Conv2d, Deconv2d, Init, Layer, MaxPool2d, Param, Relu, Sequential};
pub use ops::{
    conv2d, conv2d_backward, l2_loss, maxpool2d, maxpool2d_backward, relu, relu_backward, softmax_ce_loss,
    transposed_conv2d, transposed_conv2d_backward, ConvGrads, ConvSpec, DeconvSpec, Loss, PoolSpec, Pooled,
};
pub use optim::{Adam, Optimizer, Sgd};
pub use real::Real;
pub use tensor::{Shape4, Tensor4};
