//! Differentiable building blocks. Every forward function has a matching
//! backward function checked against finite differences.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;

pub use activation::{log_softmax, relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward};
pub use conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvGrads, ConvSpec};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use loss::{classifier_loss, cross_entropy_with_logits, joint_loss, one_hot, reconstruction_loss};
