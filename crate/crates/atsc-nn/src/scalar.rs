//! Scalar abstraction over the two numeric profiles.
//!
//! The test profile runs everything in `f64` (gradient checks and
//! bit-exact reproducibility are only meaningful there); the training
//! profile may run in `f32` for speed.

use num_traits::Float;

/// Floating scalar usable by the tape. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tag byte stored in checkpoints (`4` = f32, `8` = f64).
    const DTYPE_TAG: u8;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    /// Bytes per value in checkpoint encoding.
    const WIDTH: usize;
}

impl Scalar for f64 {
    const DTYPE_TAG: u8 = 8;
    const WIDTH: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

impl Scalar for f32 {
    const DTYPE_TAG: u8 = 4;
    const WIDTH: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

/// Shorthand for lifting an `f64` literal into the active profile.
#[inline]
pub fn lit<S: Scalar>(v: f64) -> S {
    S::from_f64(v)
}
