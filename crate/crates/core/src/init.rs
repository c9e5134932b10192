//! Weight initialization helpers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Integer offset ladder `[0, 1, -1, 2, -2, ...]` truncated to `k` terms.
pub fn offset_ladder(k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    let mut step = 1i64;
    out.push(0.0);
    while out.len() < k {
        out.push(step as f64);
        if out.len() < k {
            out.push(-step as f64);
        }
        step += 1;
    }
    out
}
