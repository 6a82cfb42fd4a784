//! Fixtures shared by the criterion benches.

use labelforge_core::LogitMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `rows x cols` i.i.d. standard-normal logits with classes `1..=num_classes` cycling.
pub fn normal_instance(
    rows: usize,
    cols: usize,
    num_classes: usize,
    seed: u64,
) -> (LogitMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let m = LogitMatrix::new(values, cols, (0..rows).collect(), "bench", "bench")
        .expect("valid matrix");
    let classes = (0..rows).map(|k| k % num_classes + 1).collect();
    (m, classes)
}
