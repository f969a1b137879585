//! Numerical core: a reverse-mode tape over dense arrays, trainable
//! parameters with gradient helpers, and scalar special functions.

pub mod param;
pub mod special;
pub mod tape;

pub use param::{eval_scalar, finite_diff, max_rel_gradient_error, value_and_grad, Parameter};
pub use special::{digamma, ln_gamma, logsumexp, softmax};
pub use tape::{Arr, Gradients, Tape, Var};
