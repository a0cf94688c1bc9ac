//! Dense NCHW tensors of `f64`.
//!
//! Every tensor is four-dimensional. Scalars are `[1, 1, 1, 1]`, per-channel
//! vectors are `[1, C, 1, 1]` and convolution kernels are `[Co, Ci, K, K]`.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)
    }
}

impl Tensor {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: [usize; 4], value: f64) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match dims {dims:?}"
        );
        Tensor { dims, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec([1, 1, 1, 1], vec![v])
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.dims, other.dims, "shape mismatch");
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.dims, other.dims, "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch element `n` as a `[1, C, H, W]` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        Tensor::from_vec(
            [1, self.dims[1], self.dims[2], self.dims[3]],
            self.data[n * per..(n + 1) * per].to_vec(),
        )
    }

    /// Stack `[1, C, H, W]` tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "cannot stack zero tensors");
        let [_, c, h, w] = items[0].dims;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            assert_eq!(t.dims, [1, c, h, w], "stack expects equal [1,C,H,W] items");
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([items.len(), c, h, w], data)
    }

    /// Channel-range slice `[N, len, H, W]`.
    pub fn channels(&self, start: usize, len: usize) -> Tensor {
        let [n, c, h, w] = self.dims;
        assert!(start + len <= c, "channel slice out of range");
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Tensor::from_vec([n, len, h, w], data)
    }
}
