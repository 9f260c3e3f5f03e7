//! Fixtures shared by the kernel benchmarks: networks with random parameters
//! and synthetic images of the right shape.

use bcpnn_core::{build_network, Dataset, NetworkConfig, NetworkState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A network built from `cfg` whose weights and biases are drawn uniformly
/// from ranges typical of a trained model.
pub fn random_network(cfg: &NetworkConfig, seed: u64) -> NetworkState {
    let mut net = build_network(cfg).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in [&mut net.input_hidden, &mut net.hidden_output] {
        p.weights.iter_mut().for_each(|w| *w = rng.gen_range(-2.0..2.0));
        p.biases.iter_mut().for_each(|b| *b = rng.gen_range(-7.0..-3.0));
    }
    net
}

/// `n` images with uniform pixels and cyclic labels.
pub fn synthetic_images(cfg: &NetworkConfig, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..n * cfg.n_input_hcu).map(|_| rng.gen::<f32>()).collect();
    let labels = (0..n).map(|i| (i % cfg.n_classes) as u8).collect();
    Dataset::new(px, labels, cfg.n_input_hcu, 1, cfg.n_classes).expect("consistent shape")
}
