//! Row-major dense matrices and the handful of kernels the encoder needs.

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.rows, self.cols)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`
pub fn matmul_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `out[k×m] += aᵀ · b` where `a` is `n×k` and `b` is `n×m`.
pub fn matmul_at_b_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let b_row = &b[i * m..(i + 1) * m];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &b_ij) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
}

/// `out[n×k] += a · bᵀ` where `a` is `n×m` and `b` is `k×m`.
pub fn matmul_a_bt_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], n: usize, m: usize, k: usize) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * k);
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let b_row = &b[p * m..(p + 1) * m];
            out[i * k + p] += dot(a_row, b_row);
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `x · w + bias` for `x` of shape `n×w.rows`.
pub fn linear<T: Scalar>(x: &[T], n: usize, w: &Tensor<T>, bias: &Tensor<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(n * w.cols);
    for _ in 0..n {
        out.extend_from_slice(&bias.data);
    }
    matmul_acc(&mut out, x, &w.data, n, w.rows, w.cols);
    out
}

/// Accumulates the parameter gradients of [`linear`] and returns the input gradient.
pub fn linear_backward<T: Scalar>(
    x: &[T],
    n: usize,
    w: &Tensor<T>,
    d_out: &[T],
    d_w: &mut Tensor<T>,
    d_bias: &mut Tensor<T>,
) -> Vec<T> {
    matmul_at_b_acc(&mut d_w.data, x, d_out, n, w.rows, w.cols);
    for row in d_out.chunks_exact(w.cols) {
        for (g, &d) in d_bias.data.iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut d_x = vec![T::zero(); n * w.rows];
    matmul_a_bt_acc(&mut d_x, d_out, &w.data, n, w.cols, w.rows);
    d_x
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Row-wise layer normalization with learned scale and shift.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    width: usize,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / width;
    let w = T::of(width as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut out = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / w;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / w;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..width {
            let xhat = (row[c] - mean) * inv;
            normalized[r * width + c] = xhat;
            out[r * width + c] = scale.data[c] * xhat + shift.data[c];
        }
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

pub fn layer_norm_backward<T: Scalar>(
    d_out: &[T],
    width: usize,
    scale: &Tensor<T>,
    cache: &NormCache<T>,
    d_scale: &mut Tensor<T>,
    d_shift: &mut Tensor<T>,
) -> Vec<T> {
    let n = d_out.len() / width;
    let w = T::of(width as f64);
    let mut d_x = vec![T::zero(); d_out.len()];
    let mut d_xhat = vec![T::zero(); width];
    for r in 0..n {
        let dy = &d_out[r * width..(r + 1) * width];
        let xhat = &cache.normalized[r * width..(r + 1) * width];
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for c in 0..width {
            d_scale.data[c] += dy[c] * xhat[c];
            d_shift.data[c] += dy[c];
            d_xhat[c] = dy[c] * scale.data[c];
            sum_d += d_xhat[c];
            sum_dx += d_xhat[c] * xhat[c];
        }
        let inv = cache.inv_std[r];
        for c in 0..width {
            d_x[r * width + c] = inv / w * (w * d_xhat[c] - sum_d - xhat[c] * sum_dx);
        }
    }
    d_x
}

const GELU_COEF: f64 = 0.044715;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::of(GELU_COEF) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::of(GELU_COEF) * x * x * x);
    let t = inner.tanh();
    let d_inner = c * (T::one() + T::of(3.0 * GELU_COEF) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * d_inner
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    out[i * m + j] += a[i * k + p] * b[p * m + j];
                }
            }
        }
        out
    }

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect(); // 4x5
        let expected = naive(&a, &b, 3, 4, 5);

        let mut out = vec![0.0; 15];
        matmul_acc(&mut out, &a, &b, 3, 4, 5);
        assert_eq!(out, expected);

        let at = transpose(&a, 3, 4); // 4x3
        let mut out = vec![0.0; 15];
        matmul_at_b_acc(&mut out, &at, &b, 4, 3, 5);
        for (x, y) in out.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }

        let bt = transpose(&b, 4, 5); // 5x4
        let mut out = vec![0.0; 15];
        matmul_a_bt_acc(&mut out, &a, &bt, 3, 4, 5);
        for (x, y) in out.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0];
        let scale = Tensor::filled(1, 4, 1.0);
        let shift = Tensor::zeros(1, 4);
        let (y, _) = layer_norm(&x, 4, &scale, &shift);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for i in -30..30 {
            let x = i as f64 * 0.17;
            let h = 1e-6;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((numeric - gelu_grad(x)).abs() < 1e-8, "x = {x}");
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }
}
