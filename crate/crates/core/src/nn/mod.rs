//! Minimal tensor and reverse-mode autodiff substrate.
//!
//! A [`Tape`] records a forward pass over coarse-grained ops (matmul,
//! convolution, softmax, ...) and replays it backwards. Parameters live in a
//! [`ParamStore`] that the tape borrows immutably, so several tapes can run
//! against one store at once and have their gradients summed afterwards.
//!
//! Everything is generic over [`Real`] so gradient checks can run the same
//! code in `f64` while training uses `f32`.

mod checkpoint;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{read_param_blob, write_param_blob, ParamEntry, BLOB_MAGIC, BLOB_VERSION};
pub use layers::{ConvEncoder, ConvEncoderConfig, Linear, Mhsa, Mlp};
pub use optim::{adam_update, AdamConfig, AdamState};
pub use params::{kaiming_uniform, GradSet, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no recorded graph to differentiate")]
    NoGraph,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("not a parameter blob (bad magic bytes)")]
    BadMagic,
    #[error("unsupported parameter blob version {0}")]
    BadVersion(u16),
    #[error("parameter blob is truncated")]
    TruncatedFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Floating-point element type of tensors and tapes.
pub trait Real:
    num_traits::Float
    + Copy
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
