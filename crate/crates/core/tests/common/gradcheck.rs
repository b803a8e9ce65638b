//! Central finite-difference checks for every nn layer and a tiny DenseNet.
//!
//! Each case is a scalar function of one flat vector returning the loss
//! (accumulated in f64) and the analytic gradient from the backward pass.
//! 32-bit: ε = 1e-3 along unit directions, max relative error < 1e-3.
//! 64-bit: per-coordinate differences at ε = 1e-4, max relative error < 1e-6.

use nasopath::densenet::{ArchitectureConfig, DenseNet, StemKind};
use nasopath::nn::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: u64 = 20;
const EPS32: f64 = 1e-3;
const TOL32: f64 = 1e-3;
const EPS64: f64 = 1e-4;
const TOL64: f64 = 1e-6;
/// Relative-error denominator floor in 64-bit; below it the f64 roundoff of
/// the difference quotient (about u·|L|/ε) dominates.
const FLOOR64: f64 = 1e-4;

type Eval<'a, T> = dyn Fn(&[T]) -> (f64, Vec<T>) + 'a;

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn shifted<T: Real>(theta: &[T], dir: &[f64], h: f64) -> Vec<T> {
    theta.iter().zip(dir).map(|(&t, &d)| T::of(t.to_f64().unwrap() + h * d)).collect()
}

/// Directional derivative along the gradient and along a gradient/noise
/// blend, both unit length.
fn directional_check(theta: &[f32], f: &Eval<f32>, rng: &mut ChaCha8Rng) -> f64 {
    let (_, g) = f(theta);
    let g = to_f64(&g);
    let gn = norm(&g);
    assert!(gn > 0.0, "zero gradient");
    let z: Vec<f64> = (0..g.len()).map(|_| rng.sample(StandardNormal)).collect();
    let zn = norm(&z);
    let along: Vec<f64> = g.iter().map(|v| v / gn).collect();
    let blend: Vec<f64> = along.iter().zip(&z).map(|(a, b)| a + 0.5 * b / zn).collect();
    let bn = norm(&blend);
    let blend: Vec<f64> = blend.iter().map(|v| v / bn).collect();
    let mut worst = 0.0f64;
    for dir in [along, blend] {
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let numeric = (f(&shifted(theta, &dir, EPS32)).0 - f(&shifted(theta, &dir, -EPS32)).0) / (2.0 * EPS32);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        worst = worst.max(rel);
    }
    worst
}

/// Per-coordinate check over `coords` (all coordinates when `None`).
fn coordinate_check(theta: &[f64], f: &Eval<f64>, coords: Option<Vec<usize>>, eps: f64) -> f64 {
    let (_, g) = f(theta);
    let coords = coords.unwrap_or_else(|| (0..theta.len()).collect());
    let mut worst = 0.0f64;
    for i in coords {
        let mut p = theta.to_vec();
        p[i] = theta[i] + eps;
        let up = f(&p).0;
        p[i] = theta[i] - eps;
        let down = f(&p).0;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(FLOOR64);
        worst = worst.max(rel);
    }
    worst
}

fn randn<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// `Σ r·y` with fixed random weights `r`; its output gradient is `r`.
fn weighted<T: Real>(y: &[T], r: &[T]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a.to_f64().unwrap() * b.to_f64().unwrap()).sum()
}

pub struct Report {
    pub name: &'static str,
    /// `None` when the case has no 32-bit check.
    pub worst32: Option<f64>,
    pub worst64: f64,
    pub tol64: f64,
}

impl Report {
    fn new(name: &'static str) -> Self {
        Report { name, worst32: Some(0.0), worst64: 0.0, tol64: TOL64 }
    }

    fn note32(&mut self, e: f64) {
        self.worst32 = self.worst32.map(|w| w.max(e));
    }

    pub fn passed(&self) -> bool {
        self.worst32.is_none_or(|w| w < TOL32) && self.worst64 < self.tol64
    }

    pub fn line(&self) -> String {
        let w32 = self.worst32.map_or("n/a".to_string(), |w| format!("{w:.3e}"));
        format!("{:<24} max rel err f32 {w32}  f64 {:.3e}", self.name, self.worst64)
    }

    pub fn assert(&self) {
        println!("{}", self.line());
        assert!(self.passed(), "{}", self.line());
    }
}

/// Runs one case in both precisions for every seed. `setup` draws the shape
/// and the initial point; `make` builds the evaluation closure.
fn run_case<S>(
    name: &'static str,
    setup: impl Fn(&mut ChaCha8Rng) -> (S, Vec<f64>),
    make32: impl Fn(&S) -> Box<Eval<'_, f32>>,
    make64: impl Fn(&S) -> Box<Eval<'_, f64>>,
) -> Report {
    let mut report = Report::new(name);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (shape, theta) = setup(&mut rng);
        let t32: Vec<f32> = theta.iter().map(|&v| v as f32).collect();
        report.note32(directional_check(&t32, &*make32(&shape), &mut rng));
        report.worst64 = report.worst64.max(coordinate_check(&theta, &*make64(&shape), None, EPS64));
    }
    report
}

#[derive(Clone)]
struct ConvShape {
    x: [usize; 4],
    w: [usize; 4],
    stride: usize,
    pad: usize,
    r: Vec<f64>,
}

fn conv_eval<T: Real>(s: &ConvShape) -> Box<Eval<'_, T>> {
    let xl: usize = s.x.iter().product();
    let r: Vec<T> = s.r.iter().map(|&v| T::of(v)).collect();
    Box::new(move |theta: &[T]| {
        let x = Tensor4::from_vec(s.x, theta[..xl].to_vec()).unwrap();
        let w = &theta[xl..];
        let y = conv2d_fwd(&x, w, s.w, s.stride, s.pad).unwrap();
        let dy = Tensor4::from_vec(y.shape(), r.clone()).unwrap();
        let (dx, dw) = conv2d_bwd(&x, w, s.w, s.stride, s.pad, &dy).unwrap();
        (weighted(y.data(), &r), [dx.into_data(), dw].concat())
    })
}

pub fn conv2d_gradients() -> Report {
    run_case(
        "conv2d",
        |rng| {
            let k = [1, 3, 5][rng.random_range(0..3)];
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=k / 2);
            let (n, cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
            let (h, w) = (rng.random_range(k..k + 5), rng.random_range(k..k + 5));
            let ho = (h + 2 * pad - k) / stride + 1;
            let wo = (w + 2 * pad - k) / stride + 1;
            let r = randn(rng, n * cout * ho * wo);
            let theta = randn(rng, n * cin * h * w + cout * cin * k * k);
            (ConvShape { x: [n, cin, h, w], w: [cout, cin, k, k], stride, pad, r }, theta)
        },
        conv_eval::<f32>,
        conv_eval::<f64>,
    )
}

#[derive(Clone)]
struct BnShape {
    x: [usize; 4],
    r: Vec<f64>,
}

fn bn_eval<T: Real>(s: &BnShape) -> Box<Eval<'_, T>> {
    let xl: usize = s.x.iter().product();
    let c = s.x[1];
    let r: Vec<T> = s.r.iter().map(|&v| T::of(v)).collect();
    Box::new(move |theta: &[T]| {
        let mut bn = BatchNorm2d::<T>::new(c);
        bn.gamma.value = theta[xl..xl + c].to_vec();
        bn.beta.value = theta[xl + c..].to_vec();
        let x = Tensor4::from_vec(s.x, theta[..xl].to_vec()).unwrap();
        let (y, cache) = bn.forward(&x, Mode::Train).unwrap();
        let dx = bn.backward(&cache, &Tensor4::from_vec(s.x, r.clone()).unwrap()).unwrap();
        (weighted(y.data(), &r), [dx.into_data(), bn.gamma.grad, bn.beta.grad].concat())
    })
}

pub fn batchnorm_gradients() -> Report {
    run_case(
        "batchnorm (train)",
        |rng| {
            let x =
                [rng.random_range(2..=4), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4)];
            let len: usize = x.iter().product();
            let r = randn(rng, len);
            let mut theta: Vec<f64> = randn(rng, len + 2 * x[1]);
            // Spread the batch so the variance is well away from eps.
            theta[..len].iter_mut().for_each(|v| *v = 2.0 * *v + 0.5);
            (BnShape { x, r }, theta)
        },
        bn_eval::<f32>,
        bn_eval::<f64>,
    )
}

#[derive(Clone)]
struct PoolShape {
    x: [usize; 4],
    r: Vec<f64>,
    kind: u8,
}

fn pool_eval<T: Real>(s: &PoolShape) -> Box<Eval<'_, T>> {
    let r: Vec<T> = s.r.iter().map(|&v| T::of(v)).collect();
    Box::new(move |theta: &[T]| {
        let x = Tensor4::from_vec(s.x, theta.to_vec()).unwrap();
        let (y, dx) = match s.kind {
            0 => {
                let y = relu_fwd(&x);
                let dx = relu_bwd(&x, &Tensor4::from_vec(y.shape(), r.clone()).unwrap());
                (y, dx)
            }
            1 => {
                let (y, cache) = maxpool_fwd(&x, 3, 2, 1).unwrap();
                let dx = maxpool_bwd(&cache, &Tensor4::from_vec(y.shape(), r.clone()).unwrap());
                (y, dx)
            }
            2 => {
                let y = avgpool2x2_fwd(&x).unwrap();
                let dx = avgpool2x2_bwd(&Tensor4::from_vec(y.shape(), r.clone()).unwrap(), s.x);
                (y, dx)
            }
            _ => {
                let y = global_avgpool_fwd(&x);
                let dx = global_avgpool_bwd(&Tensor4::from_vec(y.shape(), r.clone()).unwrap(), s.x);
                (y, dx)
            }
        };
        (weighted(y.data(), &r), dx.into_data())
    })
}

/// Inputs for piecewise-linear layers keep every value (and every pairwise
/// gap within a plane) at least 0.01 away from a kink, well beyond ε.
fn pool_setup(kind: u8) -> impl Fn(&mut ChaCha8Rng) -> (PoolShape, Vec<f64>) {
    move |rng| {
        let even = |rng: &mut ChaCha8Rng| 2 * rng.random_range(1..=3);
        let x = [rng.random_range(1..=3), rng.random_range(1..=3), even(rng), even(rng)];
        let len: usize = x.iter().product();
        let mut values: Vec<f64> = (0..len).map(|i| (i as f64 - len as f64 / 2.0 + 0.5) * 0.02).collect();
        values.shuffle(rng);
        let out = match kind {
            1 => x[0] * x[1] * x[2].div_ceil(2) * x[3].div_ceil(2),
            2 => len / 4,
            3 => x[0] * x[1],
            _ => len,
        };
        (PoolShape { x, r: randn(rng, out), kind }, values)
    }
}

pub fn relu_gradients() -> Report {
    run_case("relu", pool_setup(0), pool_eval::<f32>, pool_eval::<f64>)
}

pub fn maxpool_gradients() -> Report {
    run_case("maxpool 3x3 s2", pool_setup(1), pool_eval::<f32>, pool_eval::<f64>)
}

pub fn avgpool_gradients() -> Report {
    run_case("avgpool 2x2", pool_setup(2), pool_eval::<f32>, pool_eval::<f64>)
}

pub fn global_avgpool_gradients() -> Report {
    run_case("global avgpool", pool_setup(3), pool_eval::<f32>, pool_eval::<f64>)
}

#[derive(Clone)]
struct LinShape {
    n: usize,
    f: usize,
    o: usize,
    r: Vec<f64>,
}

fn linear_eval<T: Real>(s: &LinShape) -> Box<Eval<'_, T>> {
    let r: Vec<T> = s.r.iter().map(|&v| T::of(v)).collect();
    Box::new(move |theta: &[T]| {
        let (x, rest) = theta.split_at(s.n * s.f);
        let (w, b) = rest.split_at(s.o * s.f);
        let y = linear_fwd(x, s.n, w, b).unwrap();
        let (dx, dw, db) = linear_bwd(x, s.n, w, s.o, &r);
        (weighted(&y, &r), [dx, dw, db].concat())
    })
}

pub fn linear_gradients() -> Report {
    run_case(
        "linear",
        |rng| {
            let (n, f, o) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=4));
            let r = randn(rng, n * o);
            (LinShape { n, f, o, r }, randn(rng, n * f + o * f + o))
        },
        linear_eval::<f32>,
        linear_eval::<f64>,
    )
}

#[allow(clippy::ptr_arg)]
fn ce_eval<T: Real>(labels: &Vec<usize>) -> Box<Eval<'_, T>> {
    Box::new(move |theta: &[T]| {
        let ce = softmax_cross_entropy(theta, labels, 3).unwrap();
        (ce.loss, ce.grad)
    })
}

pub fn cross_entropy_gradients() -> Report {
    run_case(
        "softmax cross-entropy",
        |rng| {
            let n = rng.random_range(1..=6);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let logits = randn(rng, 3 * n).into_iter().map(|v: f64| 2.0 * v).collect();
            (labels, logits)
        },
        ce_eval::<f32>,
        ce_eval::<f64>,
    )
}

struct NetCase<T> {
    model: DenseNet<T>,
    x: Tensor4<T>,
    labels: Vec<usize>,
}

fn flat_params<T: Real>(m: &DenseNet<T>) -> Vec<T> {
    m.named_params().into_iter().flat_map(|(_, p)| p.value.clone()).collect()
}

fn net_eval<T: Real>(case: &NetCase<T>) -> Box<Eval<'_, T>> {
    Box::new(move |theta: &[T]| {
        let mut m = case.model.clone();
        let mut off = 0;
        for p in m.params_mut() {
            let l = p.len();
            p.value.copy_from_slice(&theta[off..off + l]);
            off += l;
        }
        m.zero_grad();
        let (logits, tape) = m.forward_train(&case.x).unwrap();
        let ce = softmax_cross_entropy(&logits, &case.labels, 3).unwrap();
        m.backward(tape, &ce.grad).unwrap();
        let grads = m.params_mut().into_iter().flat_map(|p| p.grad.clone()).collect();
        (ce.loss, grads)
    })
}

/// Moves every batchnorm to a point where no ReLU input lies within reach of
/// the finite-difference stencil: β = ±6 per channel (three in four live),
/// γ ∈ [0.5, 1]. Normalized activations stay well inside ±4.5, so live
/// channels keep a margin above zero and dead ones below it.
fn kink_free(model: &mut DenseNet<f64>, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, p) in names.iter().zip(model.params_mut()) {
        if name.ends_with(".gamma") {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.0));
        } else if name.ends_with(".beta") {
            p.value.iter_mut().for_each(|v| *v = if rng.random_bool(0.75) { 6.0 } else { -6.0 });
        }
    }
}

fn net_case(seed: u64, stem: StemKind) -> NetCase<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let mut model = DenseNet::<f64>::build(ArchitectureConfig::tiny(4, 32, stem), seed).unwrap();
    kink_free(&mut model, &mut rng);
    let n = 3;
    let x = Tensor4::from_vec([n, 3, 32, 32], (0..n * 3 * 1024).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels = (0..n).map(|i| i % 3).collect();
    NetCase { model, x, labels }
}

fn densenet_check(stem: StemKind, name: &'static str) -> Report {
    let mut report = Report::new(name);
    for seed in 0..SEEDS {
        let case64 = net_case(seed, stem);
        let case32 = NetCase { model: case64.model.cast::<f32>(), x: case64.x.cast(), labels: case64.labels.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        report.note32(directional_check(&flat_params(&case32.model), &*net_eval(&case32), &mut rng));
        if seed < 3 {
            let theta = flat_params(&case64.model);
            let mut coords: Vec<usize> = (0..theta.len()).collect();
            coords.shuffle(&mut rng);
            coords.truncate(200);
            report.worst64 = report.worst64.max(coordinate_check(&theta, &*net_eval(&case64), Some(coords), EPS64));
        }
    }
    report
}

pub fn tiny_densenet_gradients() -> Report {
    densenet_check(StemKind::Compact, "densenet k=4 32x32")
}

/// The standard stem's 3×3 max pool switches argmax within a 1e-3 stencil,
/// so the full-size stem is checked in 64-bit only, with a small step.
pub fn standard_stem_composition() -> Report {
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let case = net_case(seed, StemKind::Standard);
        let theta = flat_params(&case.model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords: Vec<usize> = (0..theta.len()).collect();
        coords.shuffle(&mut rng);
        coords.truncate(200);
        worst = worst.max(coordinate_check(&theta, &*net_eval(&case), Some(coords), 1e-6));
    }
    Report { name: "densenet std stem", worst32: None, worst64: worst, tol64: 1e-4 }
}

/// Every case, in a fixed order.
pub fn all() -> Vec<Report> {
    vec![
        conv2d_gradients(),
        batchnorm_gradients(),
        relu_gradients(),
        maxpool_gradients(),
        avgpool_gradients(),
        global_avgpool_gradients(),
        linear_gradients(),
        cross_entropy_gradients(),
        tiny_densenet_gradients(),
        standard_stem_composition(),
    ]
}
