//! Row-major FP32 tensor with emulated FP16 storage.

use super::ExecError;
use crate::hw::Precision;
use half::f16;

/// Round-trips a value through IEEE 754 half precision, the storage-time
/// quantization applied under FP16 mode.
pub fn f16_round_trip(x: f32) -> f32 {
    f16::from_f32(x).to_f32()
}

/// Dense row-major tensor. Values are held as f32; `storage_precision`
/// decides byte accounting and whether stores quantize through 16 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    storage_precision: Precision,
}

impl Tensor {
    pub fn from_vec(
        shape: Vec<usize>,
        mut data: Vec<f32>,
        storage_precision: Precision,
    ) -> Result<Self, ExecError> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len == 0 {
            return Err(ExecError::InvalidArgument(format!(
                "tensor shape must be nonempty with positive dims, got {shape:?}"
            )));
        }
        if data.len() != len {
            return Err(ExecError::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ExecError::InvalidArgument(
                "tensor values must be finite".into(),
            ));
        }
        if storage_precision == Precision::Fp16 {
            for v in &mut data {
                *v = f16_round_trip(*v);
            }
        }
        Ok(Self {
            shape,
            data,
            storage_precision,
        })
    }

    pub fn zeros(shape: Vec<usize>, storage_precision: Precision) -> Result<Self, ExecError> {
        let len: usize = shape.iter().product();
        Self::from_vec(shape, vec![0.0; len], storage_precision)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn storage_precision(&self) -> Precision {
        self.storage_precision
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Total bytes this tensor occupies at its storage precision.
    pub fn storage_bytes(&self) -> u64 {
        self.data.len() as u64 * self.storage_precision.bytes_per_element()
    }

    /// Requires exactly two dimensions and returns (rows, cols).
    pub fn as_2d(&self) -> Result<(usize, usize), ExecError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(ExecError::ShapeMismatch(format!(
                "expected a 2-D tensor, got shape {other:?}"
            ))),
        }
    }

    /// Requires exactly three dimensions and returns them.
    pub fn as_3d(&self) -> Result<(usize, usize, usize), ExecError> {
        match self.shape.as_slice() {
            [a, b, c] => Ok((*a, *b, *c)),
            other => Err(ExecError::ShapeMismatch(format!(
                "expected a 3-D tensor, got shape {other:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_length_and_finiteness() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6], Precision::Fp32).is_ok());
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5], Precision::Fp32).is_err());
        assert!(Tensor::from_vec(vec![1], vec![f32::NAN], Precision::Fp32).is_err());
        assert!(Tensor::from_vec(vec![0], vec![], Precision::Fp32).is_err());
    }

    #[test]
    fn fp16_storage_quantizes_on_construction() {
        let v = 1.0001_f32; // not representable in half precision
        let t = Tensor::from_vec(vec![1], vec![v], Precision::Fp16).unwrap();
        assert_ne!(t.data()[0], v);
        assert_eq!(t.data()[0], f16_round_trip(v));
        // Round-trip error is below 2^-10 relative.
        assert!(((t.data()[0] - v) / v).abs() <= 1.0 / 1024.0);
    }

    #[test]
    fn storage_bytes_follow_precision() {
        let t32 = Tensor::zeros(vec![4, 8], Precision::Fp32).unwrap();
        let t16 = Tensor::zeros(vec![4, 8], Precision::Fp16).unwrap();
        assert_eq!(t32.storage_bytes(), 128);
        assert_eq!(t16.storage_bytes(), 64);
    }
}
