//! Differentiable operations. Each function computes its forward value
//! eagerly and records a backward rule on the inputs' graph.

mod conv;
mod elementwise;
mod linear;
mod norm;
mod pool;

pub use conv::{conv2d, conv_output_size, Conv2dParams};
pub(crate) use conv::{
    bias_grad, column_grad, forward_with_columns, weight_grad_with_columns, ConvGeometry,
};
pub use elementwise::{add, concat, mean, mul, relu, reshape, scale, sum};
pub use linear::linear;
pub use norm::{batch_norm2d, BatchMoments, BatchNormMode, BN_EPS, BN_MOMENTUM};
pub use pool::{global_avg_pool, max_pool2d};
