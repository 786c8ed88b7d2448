//! A deliberately small CPU neural-network toolkit: channels-first feature
//! maps, convolution through im2col + GEMM, and hand-written backward passes.
//!
//! Everything is generic over [`Scalar`] so the same layers run in `f32` for
//! training and in `f64` for finite-difference checks. There is no tape;
//! callers keep the caches returned by `forward_train` and feed them back to
//! the matching `backward`.

pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod param;
pub mod roi_pool;
pub mod scalar;
pub mod tensor;

pub use conv::{Conv2d, ConvCache, ConvSpec};
pub use layers::Linear;
pub use param::{Module, Param};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
