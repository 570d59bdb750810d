//! Differentiable building blocks and loss functions, all with hand-derived
//! analytic gradients: affine transform, sigmoid/tanh, temperature softmax,
//! LSTM cell with backpropagation through time, and the three transfer losses
//! (hard cross-entropy, soft-target cross-entropy, logit matching).

mod affine;
mod losses;
mod lstm;

pub use affine::AffineLayer;
pub use losses::{
    ce_hard, ce_soft, logit_match, softmax_t, softmax_t_row, Temperature,
};
pub use lstm::LstmLayer;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Derivative expressed in terms of the activation value s = sigmoid(x).
#[inline]
pub fn sigmoid_grad_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

#[inline]
pub fn tanh_grad_from_output(t: f64) -> f64 {
    1.0 - t * t
}
