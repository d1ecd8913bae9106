//! Flat real-valued coordinate vectors and the few elementwise operations the
//! optimizers need. No broadcasting, no tensor shapes.

use std::ops::Index;

use crate::error::{Error, Result};

/// A non-empty, fixed-length sequence of `f64` coordinates.
///
/// Parameters, gradients and every per-coordinate moment live in one of these.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordVector {
    values: Vec<f64>,
}

impl CoordVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "coordinate vector must have at least one entry".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self::filled(len, 0.0)
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(len >= 1, "coordinate vector must have at least one entry");
        Self {
            values: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            values: vec![value],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected,
                found: self.len(),
            })
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }
}

impl Index<usize> for CoordVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl<'a> IntoIterator for &'a CoordVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.values.iter()
    }
}

/// `result[i] = f(a[i], b[i])`.
pub fn ewise_map2(a: &CoordVector, b: &CoordVector, f: impl Fn(f64, f64) -> f64) -> Result<CoordVector> {
    b.check_len(a.len())?;
    Ok(CoordVector {
        values: a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn norm_sq(a: &CoordVector) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm_l1(a: &CoordVector) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn mean_abs(a: &CoordVector) -> f64 {
    norm_l1(a) / a.len() as f64
}
