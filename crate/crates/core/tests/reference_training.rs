use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use valp_core::compile;
use valp_core::presets::{reference_data, three_task_reference};

#[test]
fn reference_model_loss_drops_over_500_steps() {
    let mut dropped = 0;
    for seed in 0..20 {
        let mut g = three_task_reference();
        g.hyper.epochs = 500;
        let data = reference_data(500, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = compile(&g, &mut rng).unwrap();
        let trace = model.train(&data, &g.hyper, &mut rng).unwrap();
        assert_eq!(trace.rows.len(), 500);
        assert!(trace.rows.iter().all(|r| r.composite.is_finite()));
        if trace.composite_at(500).unwrap() < trace.composite_at(1).unwrap() {
            dropped += 1;
        }
    }
    assert!(dropped >= 19, "loss dropped in only {dropped}/20 runs");
}
