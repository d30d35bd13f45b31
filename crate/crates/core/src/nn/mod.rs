//! Minimal differentiable substrate: tensors, layers, gradient checking.

pub mod gradcheck;
pub mod layers;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_sampled};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    sigmoid_scalar, upsample_nearest, upsample_nearest_backward, Conv3x3, Layer, LayerBackward,
    Linear,
};
pub use tensor::{add, Tensor};
