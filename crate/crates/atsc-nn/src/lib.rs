//! Minimal reverse-mode differentiation core for the corridor lab.
//!
//! Everything is a dense 2-D tensor of `f32` or `f64`. A [`Tape`] records
//! the forward ops of one pass; [`Tape::backward`] replays them in reverse
//! and accumulates gradients. Persistent parameters live in a
//! [`ParamStore`] outside any tape and are leased onto a tape per pass.
//!
//! The op set is intentionally exactly what the sequence encoder and
//! Q-head need: matmul, row-broadcast affine, relu, masked softmax,
//! layer norm, concat/slice, masked mean pooling, Huber loss. No
//! broadcasting generality beyond that.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod scalar;
pub mod tape;

pub use adam::AdamState;
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Tid};

/// Errors surfaced by tensor ops and parameter plumbing.
#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    /// Operand shapes are incompatible for the requested op.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A softmax/pool row had no unmasked entry.
    FullyMasked { op: &'static str },
    /// `backward` was called on a non-scalar tensor.
    NonScalarLoss { shape: (usize, usize) },
    /// Checkpoint bytes were malformed or version-incompatible.
    BadCheckpoint(String),
    /// A parameter name was registered twice or not found.
    BadParam(String),
}

impl std::fmt::Display for NnError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NnError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            NnError::FullyMasked { op } => write!(f, "{op}: fully masked row"),
            NnError::NonScalarLoss { shape } => {
                write!(f, "backward requires a 1x1 loss, got {shape:?}")
            }
            NnError::BadCheckpoint(msg) => write!(f, "bad checkpoint: {msg}"),
            NnError::BadParam(msg) => write!(f, "bad parameter: {msg}"),
        }
    }
}

impl std::error::Error for NnError {}

pub type Result<T> = std::result::Result<T, NnError>;
