use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{gemm, Param, Real, Tensor4};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn geometry(input: [usize; 4], wshape: [usize; 4], stride: usize, pad: usize) -> Result<Geometry> {
    let [_, cin, h, w] = input;
    let [cout, wcin, k, k2] = wshape;
    if wcin != cin {
        return Err(Error::Shape(format!("conv input has {cin} channels, weights expect {wcin}")));
    }
    if k != k2 || k == 0 || stride == 0 {
        return Err(Error::Shape(format!("unsupported kernel {k}x{k2} stride {stride}")));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::Shape(format!("kernel {k} does not fit input {h}x{w} with padding {pad}")));
    }
    Ok(Geometry {
        cin,
        cout,
        k,
        stride,
        pad,
        h,
        w,
        ho: (h + 2 * pad - k) / stride + 1,
        wo: (w + 2 * pad - k) / stride + 1,
    })
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Real>(x: &[T], g: &Geometry) -> Vec<T> {
    let cols = g.col_cols();
    let mut out = vec![T::zero(); g.col_rows() * cols];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut out[((ci * g.k + ky) * g.k + kx) * cols..][..cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    let dst = &mut row[oy * g.wo..][..g.wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im<T: Real>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((ci * g.k + ky) * g.k + kx) * n..][..n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            let d = &mut dx[base + ix as usize];
                            *d = *d + row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation without bias. Output spatial size is
/// `floor((H + 2p − k) / s) + 1`.
pub fn conv2d_fwd<T: Real>(
    input: &Tensor4<T>,
    weight: &[T],
    wshape: [usize; 4],
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let g = geometry(input.shape(), wshape, stride, pad)?;
    if weight.len() != wshape.iter().product::<usize>() {
        return Err(Error::Shape(format!("weight buffer has {} values for shape {wshape:?}", weight.len())));
    }
    let n = input.n();
    let out_len = g.cout * g.col_cols();
    let mut out = Tensor4::zeros([n, g.cout, g.ho, g.wo]);
    par::for_each_chunk_mut(out.data_mut(), out_len, |i, dst| {
        let x = input.sample(i);
        if g.is_pointwise() {
            gemm(false, false, g.cout, g.col_cols(), g.cin, weight, x, T::zero(), dst);
        } else {
            let cols = im2col(x, &g);
            gemm(false, false, g.cout, g.col_cols(), g.col_rows(), weight, &cols, T::zero(), dst);
        }
    });
    Ok(out)
}

/// Returns `(d_input, d_weight)`.
pub fn conv2d_bwd<T: Real>(
    input: &Tensor4<T>,
    weight: &[T],
    wshape: [usize; 4],
    stride: usize,
    pad: usize,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>)> {
    let g = geometry(input.shape(), wshape, stride, pad)?;
    let n = input.n();
    if d_out.shape() != [n, g.cout, g.ho, g.wo] {
        return Err(Error::Shape(format!(
            "conv grad has shape {:?}, expected {:?}",
            d_out.shape(),
            [n, g.cout, g.ho, g.wo]
        )));
    }
    let wlen = weight.len();
    let mut dx = Tensor4::zeros(input.shape());
    let in_len = input.sample_len();
    // Per-sample weight gradients, summed afterwards in sample order.
    let dws: Vec<Vec<T>> = {
        let mut slots: Vec<(usize, &mut [T])> = dx.data_mut().chunks_mut(in_len).enumerate().collect();
        par::map_mut(&mut slots, |(i, dxi)| {
            let i = *i;
            let dy = d_out.sample(i);
            let x = input.sample(i);
            let mut dw = vec![T::zero(); wlen];
            if g.is_pointwise() {
                gemm(false, true, g.cout, g.cin, g.col_cols(), dy, x, T::zero(), &mut dw);
                gemm(true, false, g.cin, g.col_cols(), g.cout, weight, dy, T::zero(), dxi);
            } else {
                let cols = im2col(x, &g);
                gemm(false, true, g.cout, g.col_rows(), g.col_cols(), dy, &cols, T::zero(), &mut dw);
                let mut dcols = vec![T::zero(); cols.len()];
                gemm(true, false, g.col_rows(), g.col_cols(), g.cout, weight, dy, T::zero(), &mut dcols);
                col2im(&dcols, &g, dxi);
            }
            dw
        })
    };
    let mut dw = vec![T::zero(); wlen];
    for part in dws {
        for (a, b) in dw.iter_mut().zip(part) {
            *a = *a + b;
        }
    }
    Ok((dx, dw))
}

/// Bias-free convolution layer with square kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    /// He-normal initialization: std = sqrt(2 / fan_in).
    pub fn new<R: Rng>(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let n = cout * cin * kernel * kernel;
        let value = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        Conv2d { weight: Param::new(vec![cout, cin, kernel, kernel], value), stride, padding }
    }

    pub fn wshape(&self) -> [usize; 4] {
        let s = &self.weight.shape;
        [s[0], s[1], s[2], s[3]]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d_fwd(x, &self.weight.value, self.wshape(), self.stride, self.padding)
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor4<T>, d_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (dx, dw) = conv2d_bwd(x, &self.weight.value, self.wshape(), self.stride, self.padding, d_out)?;
        for (g, d) in self.weight.grad.iter_mut().zip(dw) {
            *g = *g + d;
        }
        Ok(dx)
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d { weight: self.weight.cast(), stride: self.stride, padding: self.padding }
    }
}
