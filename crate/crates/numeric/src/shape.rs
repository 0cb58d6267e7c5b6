use std::fmt;

use crate::{NumericError, Result};

pub const MAX_RANK: usize = 4;

/// Extents of a dense row-major tensor, rank 1 to 4.
///
/// Every operation that works "along the last axis" treats a tensor as a
/// matrix of `rows() x cols()`, where `cols()` is the trailing extent and
/// `rows()` the product of the leading ones.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; MAX_RANK],
    rank: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK || dims.contains(&0) {
            return Err(NumericError::InvalidShape(dims.to_vec()));
        }
        let mut out = [1; MAX_RANK];
        out[..dims.len()].copy_from_slice(dims);
        Ok(Self { dims: out, rank: dims.len() })
    }

    pub fn scalar() -> Self {
        Self { dims: [1; MAX_RANK], rank: 1 }
    }

    pub fn matrix(rows: usize, cols: usize) -> Result<Self> {
        Self::new(&[rows, cols])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank]
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn cols(&self) -> usize {
        self.dims[self.rank - 1]
    }

    pub fn rows(&self) -> usize {
        self.dims[..self.rank - 1].iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_high_rank() {
        assert!(Shape::new(&[2, 0]).is_err());
        assert!(Shape::new(&[]).is_err());
        assert!(Shape::new(&[1, 1, 1, 1, 1]).is_err());
    }

    #[test]
    fn rows_and_cols() {
        let s = Shape::new(&[2, 3, 4]).unwrap();
        assert_eq!(s.rows(), 6);
        assert_eq!(s.cols(), 4);
        assert_eq!(s.numel(), 24);
        assert_eq!(s.to_string(), "[2x3x4]");
    }
}
