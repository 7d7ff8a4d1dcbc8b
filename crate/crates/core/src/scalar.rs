use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Storage width of an array element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementWidth {
    F32,
    F64,
}

impl ElementWidth {
    pub const fn bytes(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    pub fn from_bytes(bytes: usize) -> Option<Self> {
        match bytes {
            4 => Some(Self::F32),
            8 => Some(Self::F64),
            _ => None,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

/// Floating-point scalar the codec and the error-bound math are generic over.
///
/// Implemented for `f32` and `f64`. Arithmetic that must agree bit-for-bit
/// between compressor and decompressor is carried out in `f64`; the scalar
/// type fixes the storage width and the rounding applied on output.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    const WIDTH: ElementWidth;

    fn to_f64_lossless(self) -> f64;

    /// Rounds to the nearest representable value.
    fn from_f64_rounded(value: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from the front of `bytes`; the slice must hold at
    /// least `Self::WIDTH.bytes()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Converts an `f64` constant; used for literals inside generic code.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64_rounded(value)
    }
}

impl Real for f32 {
    const WIDTH: ElementWidth = ElementWidth::F32;

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }

    #[inline]
    #[allow(clippy::cast_possible_truncation)]
    fn from_f64_rounded(value: f64) -> Self {
        value as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[..4]);
        Self::from_le_bytes(buf)
    }
}

impl Real for f64 {
    const WIDTH: ElementWidth = ElementWidth::F64;

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_rounded(value: f64) -> Self {
        value
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        Self::from_le_bytes(buf)
    }
}
