use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
///
/// Every extent is positive and `data.len()` equals the product of the extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidTensor("rank 0 tensors are not supported".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!("zero extent in dims {dims:?}")));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidTensor(format!("dims {dims:?} overflow")))?;
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Vec<usize>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let n: usize = dims.iter().product();
        Self::new(dims, (0..n).map(f).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(H, W)` of the trailing two axes.
    pub fn plane(&self) -> (usize, usize) {
        let r = self.dims.len();
        if r < 2 {
            (1, self.dims[0])
        } else {
            (self.dims[r - 2], self.dims[r - 1])
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }
}

impl<T: Copy> Tensor<T> {
    pub fn filled(dims: Vec<usize>, value: T) -> Result<Self> {
        let n: usize = dims.iter().product();
        Self::new(dims, vec![value; n])
    }

    /// Element `(r, c)` of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[r * self.dims[1] + c]
    }

    /// Element `(ch, r, c)` of a rank-3 tensor.
    #[inline]
    pub fn at3(&self, ch: usize, r: usize, c: usize) -> T {
        self.data[(ch * self.dims[1] + r) * self.dims[2] + c]
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Self::filled(dims, T::zero())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|v| U::lit(v.as_f64()))
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn mean(&self) -> T {
        let s: T = self.data.iter().copied().sum();
        s / T::from_usize_lossy(self.data.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::new(vec![2, 3], vec![0u8, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(t.at2(1, 0), 3);
        let t = Tensor::new(vec![2, 2, 2], (0..8).collect::<Vec<u8>>()).unwrap();
        assert_eq!(t.at3(1, 0, 1), 5);
    }
}
