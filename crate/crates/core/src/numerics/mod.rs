//! Tensor and statistics kernel shared by every experiment.

pub mod conv;
pub mod diff;
pub mod dual;
pub mod linalg;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use conv::{avg_pool, conv2d, upsample2, Upsample};
pub use diff::{finite_difference, jvp, relative_error, Differentiable};
pub use dual::{Dual, DualTensor};
pub use rng::{derive_seed, Rng};
pub use stats::{quantile_threshold, ThresholdMask};
pub use tensor::Tensor;
