//! Minimal dense feed-forward network engine: analytic gradients,
//! deterministic initialization and plain SGD with coupled weight decay.

mod matrix;
mod mlp;
mod rng;

pub use matrix::RealMatrix;
pub use mlp::{
    cross_entropy, gradcheck, log_sum_exp, softmax, softmax_row, Activation, ForwardCache,
    GradientSet, Layer, LayerGradient, Mlp,
};
pub use rng::RngStream;

/// Initializes an MLP with the given layer widths (input first, classes last).
pub fn init_mlp(layer_sizes: &[usize], rng: &mut RngStream) -> crate::Result<Mlp> {
    Mlp::init(layer_sizes, rng)
}
