use super::{Mode, Param, Real, Tensor4};
use crate::error::{Error, Result};
use crate::par;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over (N, H, W).
///
/// Running statistics start at mean 0 / variance 1 but are only usable once
/// at least one training-mode batch has been seen (`tracked > 0`). The running
/// variance is updated with the unbiased batch variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub tracked: u64,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel sums over (N, H, W), accumulated in f64.
fn channel_sums<T: Real>(x: &Tensor4<T>, f: impl Fn(usize, T) -> f64 + Sync + Send) -> Vec<f64> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    par::map_range(c, |ch| {
        let mut acc = 0.0f64;
        for b in 0..n {
            let s = &x.data()[(b * c + ch) * plane..][..plane];
            acc += s.iter().map(|&v| f(ch, v)).sum::<f64>();
        }
        acc
    })
}

/// Applies `f(channel, value)` elementwise, producing a new tensor.
fn map_planes<T: Real>(x: &Tensor4<T>, f: impl Fn(usize, T) -> T + Sync + Send) -> Tensor4<T> {
    let [_, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = Tensor4::zeros(x.shape());
    par::for_each_chunk_mut(out.data_mut(), plane, |i, dst| {
        let ch = i % c;
        let src = &x.data()[i * plane..][..plane];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f(ch, s);
        }
    });
    out
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::filled(vec![channels], T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::Shape(format!("batchnorm over {} channels got input {:?}", self.channels(), x.shape())));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, BnCache<T>)> {
        self.check(x)?;
        let (mean, inv_std) = match mode {
            Mode::Train => {
                let count = (x.n() * x.h() * x.w()) as f64;
                let mean: Vec<f64> =
                    channel_sums(x, |_, v| v.to_f64().unwrap()).into_iter().map(|s| s / count).collect();
                let var: Vec<f64> = channel_sums(x, |ch, v| {
                    let d = v.to_f64().unwrap() - mean[ch];
                    d * d
                })
                .into_iter()
                .map(|s| s / count)
                .collect();
                let m = BN_MOMENTUM;
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                for ch in 0..self.channels() {
                    let rm = self.running_mean[ch].to_f64().unwrap();
                    let rv = self.running_var[ch].to_f64().unwrap();
                    self.running_mean[ch] = T::of((1.0 - m) * rm + m * mean[ch]);
                    self.running_var[ch] = T::of((1.0 - m) * rv + m * var[ch] * unbias);
                }
                self.tracked += 1;
                let inv: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
                (mean.into_iter().map(T::of).collect::<Vec<T>>(), inv)
            }
            Mode::Eval => {
                if self.tracked == 0 {
                    return Err(Error::UninitializedStats);
                }
                let inv = self.running_var.iter().map(|v| T::of(1.0 / (v.to_f64().unwrap() + BN_EPS).sqrt())).collect();
                (self.running_mean.clone(), inv)
            }
        };
        let xhat = map_planes(x, |ch, v| (v - mean[ch]) * inv_std[ch]);
        let (g, b) = (&self.gamma.value, &self.beta.value);
        let y = map_planes(&xhat, |ch, v| g[ch] * v + b[ch]);
        Ok((y, BnCache { xhat, inv_std, mode }))
    }

    /// Eval-mode forward without a cache.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        if self.tracked == 0 {
            return Err(Error::UninitializedStats);
        }
        let scale: Vec<T> = (0..self.channels())
            .map(|ch| self.gamma.value[ch] * T::of(1.0 / (self.running_var[ch].to_f64().unwrap() + BN_EPS).sqrt()))
            .collect();
        let (rm, b) = (&self.running_mean, &self.beta.value);
        Ok(map_planes(x, |ch, v| (v - rm[ch]) * scale[ch] + b[ch]))
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        if dy.shape() != cache.xhat.shape() {
            return Err(Error::Shape(format!("batchnorm grad {:?} vs cached {:?}", dy.shape(), cache.xhat.shape())));
        }
        let [n, c, h, w] = dy.shape();
        let plane = h * w;
        let xhat = &cache.xhat;
        let sums: Vec<(f64, f64)> = par::map_range(c, |ch| {
            let (mut sd, mut sdx) = (0.0f64, 0.0f64);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let d = dy.data()[i].to_f64().unwrap();
                    sd += d;
                    sdx += d * xhat.data()[i].to_f64().unwrap();
                }
            }
            (sd, sdx)
        });
        for (ch, &(sd, sdx)) in sums.iter().enumerate() {
            self.beta.grad[ch] = self.beta.grad[ch] + T::of(sd);
            self.gamma.grad[ch] = self.gamma.grad[ch] + T::of(sdx);
        }
        let g = &self.gamma.value;
        let inv = &cache.inv_std;
        let dx = match cache.mode {
            Mode::Train => {
                let count = (n * plane) as f64;
                let mean_d: Vec<T> = sums.iter().map(|s| T::of(s.0 / count)).collect();
                let mean_dx: Vec<T> = sums.iter().map(|s| T::of(s.1 / count)).collect();
                let mut out = Tensor4::zeros(dy.shape());
                par::for_each_chunk_mut(out.data_mut(), plane, |i, dst| {
                    let ch = i % c;
                    let k = g[ch] * inv[ch];
                    let d = &dy.data()[i * plane..][..plane];
                    let xh = &xhat.data()[i * plane..][..plane];
                    for ((o, &dv), &xv) in dst.iter_mut().zip(d).zip(xh) {
                        *o = k * (dv - mean_d[ch] - xv * mean_dx[ch]);
                    }
                });
                out
            }
            Mode::Eval => map_planes(dy, |ch, v| v * g[ch] * inv[ch]),
        };
        Ok(dx)
    }

    pub fn cast<U: Real>(&self) -> BatchNorm2d<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64().unwrap())).collect();
        BatchNorm2d {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
            tracked: self.tracked,
        }
    }
}
