use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Example;
use crate::interchange::FeatureMatrix;
use crate::metrics::Class;

/// Variable-length sequences whose frames are `N(±1, 1)` per dimension,
/// the sign given by the class. Returns `(train, dev)` with alternating labels.
pub fn separable_task(n_train: usize, n_dev: usize, dim: usize, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 1.0).unwrap();
    let mut make = |prefix: &str, n: usize| -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Class::Positive } else { Class::Negative };
                let mean = if label == Class::Positive { 1.0 } else { -1.0 };
                let t = rng.random_range(10..=40);
                let data = (0..t * dim).map(|_| mean + noise.sample(&mut rng)).collect();
                Example {
                    id: format!("{prefix}_{i:04}"),
                    features: FeatureMatrix::new(t, dim, 10.0, data, "synthetic").expect("finite data"),
                    label,
                }
            })
            .collect()
    };
    let train = make("train", n_train);
    let dev = make("dev", n_dev);
    (train, dev)
}
