use super::Real;
use crate::error::{Error, Result};

/// Row-wise softmax of an `n × k` logit matrix, stabilized by max-subtraction.
pub fn softmax<T: Real>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy<T> {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Per-sample losses.
    pub per_sample: Vec<f64>,
    /// d(mean loss)/d(logits) = (softmax − onehot) / N.
    pub grad: Vec<T>,
}

/// Mean categorical cross-entropy over a batch of logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], labels: &[usize], k: usize) -> Result<CrossEntropy<T>> {
    let n = labels.len();
    if n == 0 || logits.len() != n * k {
        return Err(Error::Shape(format!("{} logits for {n} labels and {k} classes", logits.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{k}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut per_sample = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * k);
    let inv_n = 1.0 / n as f64;
    for (row, &label) in logits.chunks(k).zip(labels) {
        let row64: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap()).collect();
        let max = row64.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row64.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        per_sample.push(log_z - row64[label]);
        for (j, v) in row64.iter().enumerate() {
            let p = (v - log_z).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            grad.push(T::of((p - t) * inv_n));
        }
    }
    let loss = per_sample.iter().sum::<f64>() * inv_n;
    Ok(CrossEntropy { loss, per_sample, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln3() {
        let ce = softmax_cross_entropy(&[0.0f32, 0.0, 0.0], &[1], 3).unwrap();
        assert!((ce.loss - 3f64.ln()).abs() < 1e-12);
        assert!((ce.loss - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn saturated_logit_is_finite() {
        let ce = softmax_cross_entropy(&[1000.0f32, 0.0, 0.0], &[0], 3).unwrap();
        assert!(ce.loss.is_finite() && ce.loss < 1e-12);
        let ce = softmax_cross_entropy(&[1000.0f32, 0.0, 0.0], &[2], 3).unwrap();
        assert!((ce.loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(softmax_cross_entropy(&[f32::NAN, 0.0, 0.0], &[0], 3).is_err());
        assert!(softmax_cross_entropy(&[0.0f32, 0.0, 0.0], &[3], 3).is_err());
        assert!(softmax_cross_entropy::<f32>(&[], &[], 3).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1.0f32, 2.0, 3.0, -50.0, 80.0, 0.5], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
