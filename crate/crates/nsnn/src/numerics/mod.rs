//! Dense linear algebra, loss functions and reproducible random streams.
//!
//! Everything here is deliberately small: row-major `f64` matrices, a
//! counter-based splittable RNG so parallel and serial runs agree, and the
//! softmax cross-entropy used by the predictive head.

mod loss;
mod matrix;
mod rng;

pub use loss::softmax_cross_entropy;
pub use matrix::Matrix;
pub use rng::RngStream;
