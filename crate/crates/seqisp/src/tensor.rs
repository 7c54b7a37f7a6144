//! Dense f64 tensors and the few linear-algebra primitives the networks use.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    /// Seeded uniform init over (lo, hi).
    pub fn uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Self {
        let len: usize = dims.iter().product();
        let data = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.dims)
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    /// Row `r` of a rank-2 tensor.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.dims.len(), 2);
        let cols = self.dims[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert_eq!(self.dims.len(), 2);
        let cols = self.dims[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// out += W x for a (rows × cols) matrix.
pub fn matvec_acc(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let rows = w.dims()[0];
    let cols = w.dims()[1];
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &w.data[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] += acc;
    }
}

/// out += Wᵀ y for a (rows × cols) matrix.
pub fn matvec_t_acc(w: &Tensor, y: &[f64], out: &mut [f64]) {
    let rows = w.dims()[0];
    let cols = w.dims()[1];
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let row = &w.data[r * cols..(r + 1) * cols];
        let yr = y[r];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += yr * wv;
        }
    }
}

/// dW += dy xᵀ (outer product accumulate).
pub fn outer_acc(dw: &mut Tensor, dy: &[f64], x: &[f64]) {
    let rows = dw.dims()[0];
    let cols = dw.dims()[1];
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        let row = &mut dw.data[r * cols..(r + 1) * cols];
        let d = dy[r];
        for (w, xv) in row.iter_mut().zip(x) {
            *w += d * xv;
        }
    }
}

pub fn add_scaled(out: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(out.len(), src.len());
    for (o, s) in out.iter_mut().zip(src) {
        *o += scale * s;
    }
}
