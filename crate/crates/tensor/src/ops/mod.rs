//! Stateless forward kernels and their backward counterparts.

mod conv;
mod elementwise;
mod linear;
mod norm;
mod spatial;

pub use conv::{
    conv2d, conv2d_backward, conv_output_size, transposed_conv2d, transposed_conv2d_backward, Conv2dCtx, ConvGeometry,
    ConvGrads,
};
pub use elementwise::{add, concat_channels, dropout, dropout_backward, relu, relu_backward, split_channels};
pub use linear::{linear, linear_backward, LinearGrads};
pub use norm::{batchnorm, batchnorm_backward, BatchNormCtx, BatchNormGrads, BatchNormState};
pub use spatial::{
    global_avg_pool, global_avg_pool_backward, soft_argmax, soft_argmax_backward, spatial_softmax,
    spatial_softmax_backward, upsample2x, upsample2x_backward,
};
