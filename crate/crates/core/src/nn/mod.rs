//! Differentiable kernels: valid 1-D convolution, regional max-pooling, dense
//! layers, dropout, binary cross-entropy, L2 and Adam. Every forward kernel has
//! a matching backward kernel; there is no general graph machinery.

mod adam;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv1d_backward, conv1d_backward_into, conv1d_forward, ConvGrads, ConvSpec};
pub use dense::{dense_backward_into, dense_forward, sigmoid, softplus, Activation, DenseOutput};
pub use dropout::{dropout, Mode};
pub use loss::{bce_loss, l2_penalty, PROB_EPS};
pub use pool::{maxpool_backward, maxpool_backward_into, maxpool_forward, PoolSpec};
pub use tensor::{axpy, dot, Tensor2};
