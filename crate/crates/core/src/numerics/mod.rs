//! Dense tensors, reverse-mode differentiation and the closed-form
//! least-squares layer.

pub mod gradcheck;
pub mod linalg;
pub mod lstsq;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use lstsq::{backward_pinv_least_squares, pinv_least_squares, LeastSquaresLayer, LeastSquaresResult, ResidualLoss, Ridge};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
