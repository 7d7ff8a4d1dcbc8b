use thiserror::Error;

use crate::scalar::{ElementWidth, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape must have at least one non-zero extent")]
    EmptyShape,
    #[error("value at flat index {index} is not finite")]
    NonFinite { index: usize },
    #[error("raw input of {bytes} bytes is not a whole number of {width}-byte elements")]
    RaggedBytes { bytes: usize, width: usize },
}

/// Dense row-major n-dimensional array of finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    min: T,
    max: T,
}

impl<T: Real> Field<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self, FieldError> {
        let expected = checked_len(&shape)?;
        if expected != values.len() {
            return Err(FieldError::ShapeMismatch {
                shape,
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        let (min, max) = values
            .iter()
            .fold((values[0], values[0]), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(Self {
            shape,
            values,
            min,
            max,
        })
    }

    /// Decodes headerless little-endian row-major bytes.
    pub fn from_le_bytes(shape: Vec<usize>, bytes: &[u8]) -> Result<Self, FieldError> {
        let width = T::WIDTH.bytes();
        if bytes.len() % width != 0 {
            return Err(FieldError::RaggedBytes {
                bytes: bytes.len(),
                width,
            });
        }
        let values = bytes.chunks_exact(width).map(T::read_le).collect();
        Self::new(shape, values)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * T::WIDTH.bytes());
        for v in &self.values {
            v.write_le(&mut out);
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> ElementWidth {
        T::WIDTH
    }

    /// Size of the raw array in bytes.
    pub fn byte_len(&self) -> usize {
        self.values.len() * T::WIDTH.bytes()
    }

    pub fn min(&self) -> T {
        self.min
    }

    pub fn max(&self) -> T {
        self.max
    }

    /// `max - min`, computed in `f64`.
    pub fn value_range(&self) -> f64 {
        self.max.to_f64_lossless() - self.min.to_f64_lossless()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64_lossless()).collect()
    }
}

pub(crate) fn checked_len(shape: &[usize]) -> Result<usize, FieldError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(FieldError::EmptyShape);
    }
    Ok(shape.iter().product())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caches_range() {
        let f = Field::new(vec![2, 2], vec![3.0f64, -1.0, 4.0, 0.5]).unwrap();
        assert_eq!(f.min(), -1.0);
        assert_eq!(f.max(), 4.0);
        assert_eq!(f.value_range(), 5.0);
        assert_eq!(f.byte_len(), 32);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Field::new(vec![3], vec![1.0f32, 2.0]),
            Err(FieldError::ShapeMismatch { expected: 3, actual: 2, .. })
        ));
        assert_eq!(
            Field::new(vec![2], vec![1.0f32, f32::NAN]),
            Err(FieldError::NonFinite { index: 1 })
        );
        assert_eq!(Field::<f64>::new(vec![0, 3], vec![]), Err(FieldError::EmptyShape));
        assert!(matches!(
            Field::<f32>::from_le_bytes(vec![1], &[0, 0, 0]),
            Err(FieldError::RaggedBytes { .. })
        ));
    }

    #[test]
    fn le_bytes_roundtrip() {
        let f = Field::new(vec![3], vec![1.25f32, -7.0, 1e-3]).unwrap();
        let back = Field::<f32>::from_le_bytes(vec![3], &f.to_le_bytes()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn row_major_strides() {
        assert_eq!(strides(&[4, 5, 6]), vec![30, 6, 1]);
        assert_eq!(strides(&[7]), vec![1]);
    }
}
