//! Seeded inputs shared by the benchmarks.

use arranger_core::audio_io::{Waveform, TARGET_SAMPLE_RATE};
use arranger_core::autograd::Tensor;
use arranger_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform noise in `[-0.5, 0.5]` at the target rate.
pub fn noise(secs: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * TARGET_SAMPLE_RATE as f64) as usize;
    Waveform::mono((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), TARGET_SAMPLE_RATE)
}

/// Matrix with entries uniform in `[-1, 1]`.
pub fn unit_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Standard-normal tensor.
pub fn gaussian_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::randn(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}
