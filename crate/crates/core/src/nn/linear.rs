use rand::Rng;

use super::{gemm, Param, Real};
use crate::error::{Error, Result};

/// `y = x·Wᵀ + b` for `x` of shape (N, F) and `W` of shape (O, F).
pub fn linear_fwd<T: Real>(x: &[T], n: usize, weight: &[T], bias: &[T]) -> Result<Vec<T>> {
    let out = bias.len();
    if out == 0 || !weight.len().is_multiple_of(out) {
        return Err(Error::Shape(format!("linear weight of {} values vs {} outputs", weight.len(), out)));
    }
    let f = weight.len() / out;
    if x.len() != n * f {
        return Err(Error::Shape(format!("linear expects {n}x{f} input, got {} values", x.len())));
    }
    let mut y: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    gemm(false, true, n, out, f, x, weight, T::one(), &mut y);
    Ok(y)
}

/// Returns `(dx, dW, db)`.
pub fn linear_bwd<T: Real>(x: &[T], n: usize, weight: &[T], out: usize, dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let f = weight.len() / out;
    let mut dx = vec![T::zero(); n * f];
    gemm(false, false, n, f, out, dy, weight, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); out * f];
    gemm(true, false, out, f, n, dy, x, T::zero(), &mut dw);
    let mut db = vec![T::zero(); out];
    for row in dy.chunks(out) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    (dx, dw, db)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform(−1/√F, 1/√F) weights, zero bias.
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        Linear { weight: Param::new(vec![outputs, inputs], w), bias: Param::filled(vec![outputs], T::zero()) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        linear_fwd(x, n, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &[T], n: usize, dy: &[T]) -> Vec<T> {
        let (dx, dw, db) = linear_bwd(x, n, &self.weight.value, self.outputs(), dy);
        for (g, d) in self.weight.grad.iter_mut().zip(dw) {
            *g = *g + d;
        }
        for (g, d) in self.bias.grad.iter_mut().zip(db) {
            *g = *g + d;
        }
        dx
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear { weight: self.weight.cast(), bias: self.bias.cast() }
    }
}
