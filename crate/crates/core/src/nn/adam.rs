use serde::{Deserialize, Serialize};

use super::{Param, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor, in the
/// order the parameters are passed to [`AdamState::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between Adam steps");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (lr, eps, bc1, bc2) = (T::of(lr), T::of(eps), T::of(bc1), T::of(bc2));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), m.len(), "parameter shape changed between Adam steps");
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.value[i] = p.value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::new(vec![3], vec![1.0f64, -2.0, 0.5]);
        p.grad = vec![3.0, -0.2, 40.0];
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+ε).
        let expected =
            [1.0 - 1e-3 * 3.0 / (3.0 + 1e-8), -2.0 + 1e-3 * 0.2 / (0.2 + 1e-8), 0.5 - 1e-3 * 40.0 / (40.0 + 1e-8)];
        for (a, e) in p.value.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Param::new(vec![2], vec![0.25f32, -4.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        adam.step(&mut [&mut p]);
        assert_eq!(p.value, vec![0.25, -4.0]);
        assert_eq!(adam.t, 2);
        assert!(adam.v.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Param::new(vec![4], vec![0.1f32, 0.2, 0.3, 0.4]);
            let mut adam = AdamState::new(AdamConfig::default());
            for s in 0..5 {
                p.grad = p.value.iter().map(|v| v * (s as f32 + 1.0) - 0.05).collect();
                adam.step(&mut [&mut p]);
            }
            p.value
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
