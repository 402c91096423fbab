//! Seeded inputs shared by the benchmarks.

use mpoxmamba::ssm::SsmParams;
use mpoxmamba::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).expect("shape matches data")
}

/// Input `[len, d_inner]` and a stable parameter set for one sequence.
pub fn scan_problem(len: usize, d_inner: usize, d_state: usize, seed: u64) -> Result<(Tensor<f32>, SsmParams<f32>)> {
    let params = SsmParams::new(
        random_tensor(&[d_inner, d_state], -2.0, -0.1, seed),
        random_tensor(&[len, d_state], -1.0, 1.0, seed + 1),
        random_tensor(&[len, d_state], -1.0, 1.0, seed + 2),
        random_tensor(&[len, d_inner], 0.001, 0.1, seed + 3),
        random_tensor(&[d_inner], -1.0, 1.0, seed + 4),
    )?;
    Ok((random_tensor(&[len, d_inner], -1.0, 1.0, seed + 5), params))
}
