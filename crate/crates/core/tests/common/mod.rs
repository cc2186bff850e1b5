//! Shared test oracles: central finite differences and tolerance helpers.
//! These stay independent of the tape's backward pass, which they verify.

#![allow(dead_code)]

use tarpro_core::tensor::Tensor;

/// Central-difference gradient of a scalar function w.r.t. one tensor input.
pub fn numerical_grad(x: &Tensor<f64>, step: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        *g = (f(&plus) - f(&minus)) / (2.0 * step);
    }
    grad
}

/// Relative agreement with a small absolute floor for near-zero entries.
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64, context: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{context}: length");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        assert!(
            diff <= atol + rtol * scale,
            "{context}: coordinate {i}: analytic {a} vs numeric {n} (diff {diff})"
        );
    }
}

/// Uniform random tensor in [lo, hi] from a fixed seed.
pub fn rand_tensor(seed: u64, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = tarpro_core::Seed(seed).rng();
    let mut data = vec![0.0f64; dims.iter().product()];
    rng.fill_uniform(&mut data, lo, hi);
    Tensor::from_vec(dims, data).unwrap()
}
