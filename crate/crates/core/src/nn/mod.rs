//! Layer primitives, reverse-mode autodiff and the finite-difference oracle.

mod conv;
pub mod gradcheck;
mod ops;
mod tape;

pub use conv::{conv1d_h, conv1d_w, conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, NOISE_FLOOR};
pub use ops::{
    batch_norm, global_avg_pool, linear, mse_loss, relu, softmax, softmax_cross_entropy, BnForward, Mode, BN_EPS,
    BN_MOMENTUM,
};
pub use tape::{Gradients, Tape, Var};
