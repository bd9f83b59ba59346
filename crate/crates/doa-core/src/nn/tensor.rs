//! Dense rank-3 tensor with `(time, width, channel)` layout, channel axis
//! contiguous. Rank-2 data uses a trailing channel dimension of 1.

use super::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape[0] * shape[1] * shape[2],
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, t: usize, f: usize, c: usize) -> usize {
        debug_assert!(t < self.shape[0] && f < self.shape[1] && c < self.shape[2]);
        (t * self.shape[1] + f) * self.shape[2] + c
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize, c: usize) -> T {
        self.data[self.index(t, f, c)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, f: usize, c: usize, v: T) {
        let i = self.index(t, f, c);
        self.data[i] = v;
    }

    /// Contiguous channel row at `(t, f)`.
    #[inline]
    pub fn row(&self, t: usize, f: usize) -> &[T] {
        let base = (t * self.shape[1] + f) * self.shape[2];
        &self.data[base..base + self.shape[2]]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize, f: usize) -> &mut [T] {
        let base = (t * self.shape[1] + f) * self.shape[2];
        &mut self.data[base..base + self.shape[2]]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Reinterpret as a new shape with the same element count.
    pub fn reshaped(mut self, shape: [usize; 3]) -> Self {
        assert_eq!(
            self.data.len(),
            shape[0] * shape[1] * shape[2],
            "reshape changes element count"
        );
        self.shape = shape;
        self
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}
