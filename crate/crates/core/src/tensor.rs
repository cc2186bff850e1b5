//! Dense row-major tensor. Deliberately small: the crate needs shape-checked
//! storage and a few elementwise helpers, not a general array library.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(CoreError::ShapeMismatch {
                expected: format_dims(dims),
                got: alloc::format!("{} elements", data.len()),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Scalar (rank-0 equivalent) stored as a single-element tensor.
    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data reinterpreted under new dims with equal element count.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != self.data.len() {
            return Err(CoreError::ShapeMismatch {
                expected: format_dims(dims),
                got: format_dims(&self.dims),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(CoreError::ShapeMismatch {
                expected: format_dims(&self.dims),
                got: format_dims(&other.dims),
            });
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute element; zero for empty tensors.
    pub fn inf_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    /// Euclidean norm, accumulated in f64 for stability.
    pub fn l2_norm(&self) -> f64 {
        let sq: f64 = self
            .data
            .iter()
            .map(|&x| {
                let v = x.to_f64();
                v * v
            })
            .sum();
        num_traits::Float::sqrt(sq)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// FNV-1a over element bit patterns; used for frozen-weight checks and
    /// cache/image binding. Stable across runs on a given platform.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for &d in &self.dims {
            for b in (d as u64).to_le_bytes() {
                mix(b);
            }
        }
        for &x in &self.data {
            for b in x.to_f64().to_bits().to_le_bytes() {
                mix(b);
            }
        }
        h
    }
}

pub(crate) fn format_dims(dims: &[usize]) -> String {
    let mut s = String::new();
    s.push('(');
    for (i, d) in dims.iter().enumerate() {
        if i > 0 {
            s.push('x');
        }
        let _ = write!(s, "{d}");
    }
    s.push(')');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn inf_norm_of_mixed_signs() {
        let t = Tensor::from_vec(&[3], vec![0.5f32, -2.0, 1.0]).unwrap();
        assert_eq!(t.inf_norm(), 2.0);
    }

    #[test]
    fn fingerprint_is_sensitive_to_data_and_dims() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let mut c = a.clone();
        c.data_mut()[0] = 1.5;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }
}
