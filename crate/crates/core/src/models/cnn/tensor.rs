//! Minimal NCHW tensor. The CNN is generic over the element type so the same
//! code runs f32 in production and f64 under gradient checks.

use num_traits::Float;

/// Cast an f64 constant into the working float type.
pub(crate) fn t<T: Float>(x: f64) -> T {
    T::from(x).expect("f64 representable in float type")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    /// N, C, H, W
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "tensor shape/data mismatch");
        Tensor { shape, data }
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.idx(n, c, h, w);
        &mut self.data[i]
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }
}
