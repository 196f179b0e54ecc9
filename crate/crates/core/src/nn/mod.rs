//! Numeric substrate: tensors, parameters, kernels with backward passes,
//! rmsprop and finite-difference gradient checking.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use ops::{
    bce_logit_grad, bce_loss, conv1d_wide, conv1d_wide_backward, dense, dense_backward, dot, dropout,
    dropout_backward, embedding_lookup, embedding_lookup_backward, kmax_pool, kmax_pool_backward,
    sigmoid, Activation,
};
pub use optim::{RmsProp, RmsPropConfig, RmsPropState};
pub use tensor::{DType, Parameter, Real, Tensor};
