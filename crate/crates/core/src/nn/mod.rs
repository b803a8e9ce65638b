//! Minimal CNN kernel: NCHW tensors and the forward/backward passes DenseNet
//! needs, plus softmax cross-entropy and Adam.
//!
//! Every kernel is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for tight finite-difference checks. Batch-parallel
//! kernels reduce per-sample partial results in sample order, which makes all
//! results independent of the worker count.

mod adam;
mod conv;
mod linear;
mod loss;
mod norm;
mod pool;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv2d_bwd, conv2d_fwd, Conv2d};
pub use linear::{linear_bwd, linear_fwd, Linear};
pub use loss::{softmax, softmax_cross_entropy, CrossEntropy};
pub use norm::{BatchNorm2d, BnCache, BN_EPS, BN_MOMENTUM};
pub use pool::{
    avgpool2x2_bwd, avgpool2x2_fwd, global_avgpool_bwd, global_avgpool_fwd, maxpool_bwd, maxpool_fwd, relu_bwd,
    relu_fwd, MaxPoolCache,
};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

pub trait Real: Float + Default + Debug + Display + Send + Sync + Sum + 'static {
    /// `c = a·b + beta·c` with raw strides (see `matrixmultiply`).
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self;
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn of(x: f64) -> f32 {
        x as f32
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn of(x: f64) -> f64 {
        x
    }
}

/// Row-major `c (m×n) = op(a)·op(b) + beta·c`, where `op(a)` is `m×k` and
/// `op(b)` is `k×n`. A transposed operand is stored in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe the stated row-major layouts.
    unsafe { T::gemm_raw(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn filled(shape: [usize; 4], v: T) -> Self {
        Tensor4 { shape, data: vec![v; shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per sample (C·H·W).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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

    pub fn sample(&self, n: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[n * l..(n + 1) * l]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cc, hh, ww] = self.shape;
        self.data[((n * cc + c) * hh + y) * ww + x]
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 { shape: self.shape, data: self.data.iter().map(|v| U::of(v.to_f64().unwrap())).collect() }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Shape(format!("cannot concat {:?} with {:?}", a.shape, b.shape)));
        }
        let mut out = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..n {
            out.extend_from_slice(a.sample(i));
            out.extend_from_slice(b.sample(i));
        }
        Ok(Tensor4 { shape: [n, ca + cb, h, w], data: out })
    }

    /// Splits along channels at `c`: inverse of [`Tensor4::concat_channels`].
    pub fn split_channels(&self, c: usize) -> (Tensor4<T>, Tensor4<T>) {
        let [n, ct, h, w] = self.shape;
        let plane = h * w;
        let mut a = Vec::with_capacity(n * c * plane);
        let mut b = Vec::with_capacity(n * (ct - c) * plane);
        for i in 0..n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..c * plane]);
            b.extend_from_slice(&s[c * plane..]);
        }
        (Tensor4 { shape: [n, c, h, w], data: a }, Tensor4 { shape: [n, ct - c, h, w], data: b })
    }

    pub fn add_assign(&mut self, other: &Tensor4<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Param { shape, value, grad }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Param::new(shape, vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64().unwrap())).collect();
        Param { shape: self.shape.clone(), value: conv(&self.value), grad: conv(&self.grad) }
    }
}
