//! Minimal neural-network substrate shared by the depth, policy and collision
//! networks: tensors, dense/noisy/convolution layers with hand-written
//! backward passes, an adaptive-moment optimizer, checkpoints and a
//! finite-difference gradient checker.

mod gemm;
mod layer;
mod loss;
mod params;
mod tensor;
mod train;

pub use gemm::gemm;
pub use layer::{
    conv2d_forward, conv_backward, conv_forward_cached, conv_out_extent, dense_backward_batch,
    dense_forward, dense_forward_batch, layer_noise_rng, leaky_relu, Activation, ConvCache, DenseCache,
    Layer, LayerKind, NoiseSample, DEFAULT_LEAKY_SLOPE,
};
pub use loss::{binary_cross_entropy, huber, huber_grad, huber_mean, softmax2, softmax2_cross_entropy, LossSpec};
pub use params::{same_architecture, AdamConfig, NetworkParams};
pub use tensor::Tensor;
pub use train::{
    fold_kinks, gradient_check, gradient_check_report, train_step, GradCheckOptions, GradCheckReport, Mlp, Model,
};
pub(crate) use train::{stack_backward, stack_forward, stack_signature};
