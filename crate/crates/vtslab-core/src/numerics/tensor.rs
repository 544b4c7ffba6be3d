//! Dense row-major `f64` tensor.

use crate::error::{Error, Result};

/// Dense tensor with row-major layout. Rank is arbitrary but the crate only
/// uses rank 1 and 2. Construction checks that the element count matches the
/// shape and that every element is finite; the finiteness invariant is
/// re-checked by the tape after every operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and data. Errors if the element count
    /// does not match or any element is non-finite.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor::new",
                format!("{expected} elements for shape {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        if !t.all_finite() {
            return Err(Error::NonFinite {
                op: "Tensor::new".into(),
            });
        }
        Ok(t)
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Tensor filled by evaluating `f` at each flat index, in order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(&mut f).collect())
    }

    /// Rank-1 tensor wrapping a slice.
    pub fn vector(data: &[f64]) -> Result<Self> {
        Tensor::new(&[data.len()], data.to_vec())
    }

    /// Shape-`[1]` tensor holding one value.
    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a shape-`[1]` (or any one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "Tensor::item",
                "1 element",
                format!("{:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> Result<usize> {
        self.dims2().map(|(r, _)| r)
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> Result<usize> {
        self.dims2().map(|(_, c)| c)
    }

    /// Both dimensions of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape("Tensor::dims2", "rank 2", format!("{other:?}"))),
        }
    }

    /// Borrow one row of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let (r, c) = self.dims2()?;
        if i >= r {
            return Err(Error::usage(format!("row {i} out of range for {r} rows")));
        }
        Ok(&self.data[i * c..(i + 1) * c])
    }

    /// True when every element is finite (no NaN, no infinities).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference to another tensor of the
    /// same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::max_abs_diff",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Bitwise equality: same shape and identical `f64` bit patterns,
    /// distinguishing `0.0` from `-0.0` and comparing NaNs by bits.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        let err = Tensor::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("6 elements"), "{msg}");
        assert!(msg.contains("5 elements"), "{msg}");
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(&[2], vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn row_access() {
        let t = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1).unwrap(), &[4.0, 5.0, 6.0]);
        assert!(t.row(2).is_err());
    }

    #[test]
    fn bitwise_eq_distinguishes_signed_zero() {
        let a = Tensor::vector(&[0.0]).unwrap();
        let b = Tensor::vector(&[-0.0]).unwrap();
        assert_eq!(a, b); // PartialEq on f64 treats them as equal
        assert!(!a.bitwise_eq(&b));
    }
}
