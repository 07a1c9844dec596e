//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use valp_core::harness::search::image_problem;
use valp_core::{initialize, ColumnGroups, ModelGraph, SynthesisConfig};

/// Synthesized graph for the full-size image problem.
pub fn image_graph(seed: u64) -> ModelGraph {
    let (inputs, outputs) = image_problem("i0", 784, 32, 10);
    let cfg = SynthesisConfig {
        seed,
        ..SynthesisConfig::default()
    };
    initialize(&inputs, &outputs, &cfg).expect("default config synthesizes")
}

/// Random image-shaped batch with all three target groups.
pub fn image_batch(rows: usize, seed: u64) -> ColumnGroups {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((rows, 784), || rng.random::<f64>());
    let r = Array2::from_elem((rows, 32), 1.0 / 32.0);
    let mut c = Array2::zeros((rows, 10));
    for i in 0..rows {
        c[[i, i % 10]] = 1.0;
    }
    ColumnGroups::new()
        .with("S", x.clone())
        .with("i0", x)
        .with("R", r)
        .with("C", c)
}
