use super::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::par;

pub fn relu_fwd<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_bwd<T: Real>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    in_shape: [usize; 4],
    /// Flat input index of each output's maximum.
    argmax: Vec<usize>,
}

/// Max pooling with a `k×k` window; padded cells never win. Ties go to the
/// first cell in row-major window order.
pub fn maxpool_fwd<T: Real>(x: &Tensor4<T>, k: usize, stride: usize, pad: usize) -> Result<(Tensor4<T>, MaxPoolCache)> {
    let [n, c, h, w] = x.shape();
    if h + 2 * pad < k || w + 2 * pad < k || pad >= k {
        return Err(Error::Shape(format!("max pool {k}x{k} pad {pad} does not fit {h}x{w}")));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut y = Tensor4::zeros([n, c, ho, wo]);
    let mut argmax = vec![0usize; n * c * ho * wo];
    let out_plane = ho * wo;
    let planes = par::map_range(n * c, |p| {
        let base = p * h * w;
        let src = &x.data()[base..base + h * w];
        let mut vals = Vec::with_capacity(out_plane);
        let mut idx = Vec::with_capacity(out_plane);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut bi = 0;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = iy as usize * w + ix as usize;
                        if src[i] > best {
                            best = src[i];
                            bi = i;
                        }
                    }
                }
                vals.push(best);
                idx.push(base + bi);
            }
        }
        (vals, idx)
    });
    for (p, (vals, idx)) in planes.into_iter().enumerate() {
        y.data_mut()[p * out_plane..][..out_plane].copy_from_slice(&vals);
        argmax[p * out_plane..][..out_plane].copy_from_slice(&idx);
    }
    Ok((y, MaxPoolCache { in_shape: [n, c, h, w], argmax }))
}

pub fn maxpool_bwd<T: Real>(cache: &MaxPoolCache, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(cache.in_shape);
    for (&i, &d) in cache.argmax.iter().zip(dy.data()) {
        dx.data_mut()[i] = dx.data_mut()[i] + d;
    }
    dx
}

/// 2×2 average pooling, stride 2. Odd spatial dims are rejected.
pub fn avgpool2x2_fwd<T: Real>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("2x2 average pool needs even spatial dims, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut y = Tensor4::zeros([n, c, ho, wo]);
    par::for_each_chunk_mut(y.data_mut(), ho * wo, |p, dst| {
        let src = &x.data()[p * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let (iy, ix) = (2 * oy, 2 * ox);
                let s = src[iy * w + ix] + src[iy * w + ix + 1] + src[(iy + 1) * w + ix] + src[(iy + 1) * w + ix + 1];
                dst[oy * wo + ox] = s * quarter;
            }
        }
    });
    Ok(y)
}

pub fn avgpool2x2_bwd<T: Real>(dy: &Tensor4<T>, in_shape: [usize; 4]) -> Tensor4<T> {
    let [_, _, h, w] = in_shape;
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = Tensor4::zeros(in_shape);
    par::for_each_chunk_mut(dx.data_mut(), h * w, |p, dst| {
        let src = &dy.data()[p * ho * wo..][..ho * wo];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * wo + x / 2] * quarter;
            }
        }
    });
    dx
}

pub fn global_avgpool_fwd<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let scale = T::of(1.0 / plane as f64);
    let data = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * scale).collect();
    Tensor4::from_vec([n, c, 1, 1], data).expect("shape matches")
}

pub fn global_avgpool_bwd<T: Real>(dy: &Tensor4<T>, in_shape: [usize; 4]) -> Tensor4<T> {
    let plane = in_shape[2] * in_shape[3];
    let scale = T::of(1.0 / plane as f64);
    let mut dx = Tensor4::zeros(in_shape);
    for (dst, &g) in dx.data_mut().chunks_mut(plane).zip(dy.data()) {
        dst.iter_mut().for_each(|d| *d = g * scale);
    }
    dx
}
