use ndgrad::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform in `[-r, r]` with `r = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
    Tensor::matrix(rows, cols, data).expect("finite values of the right length")
}

pub fn zeros(rows: usize, cols: usize) -> Tensor {
    Tensor::zeros(&[rows, cols])
}

pub fn ones(rows: usize, cols: usize) -> Tensor {
    Tensor::full(&[rows, cols], 1.0).expect("finite")
}
