//! Scratch timing/tuning harness; not part of the deliverable.

use std::time::Instant;

use erasure_core::schedule::NoiseSchedule;
use erasure_core::seeds::child_seed;
use erasure_core::training::{base_quality, train_base, BaseTrainConfig};
use erasure_core::world::ConceptWorld;

fn main() {
    let sched = NoiseSchedule::cosine(100).unwrap();
    for (steps, batch_size, learning_rate) in [
        (12000usize, 8usize, 3e-3),
        (12000, 16, 3e-3),
        (20000, 16, 2e-3),
        (30000, 16, 2e-3),
    ] {
        let cfg = BaseTrainConfig { steps, batch_size, learning_rate, ..BaseTrainConfig::default() };
        let mut rates = Vec::new();
        let t0 = Instant::now();
        for seed in 0..3u64 {
            let world = ConceptWorld::default_world(seed);
            let (den, _) =
                train_base(&world, &sched, &cfg, child_seed(seed, &["train-base"], &[])).unwrap();
            rates.push(base_quality(&den, &sched, 200, 50, 3.0, seed).unwrap());
        }
        println!(
            "steps {steps:>5} batch {batch_size:>2} lr {learning_rate:.0e}: rates {:?} ({:.1}s total)",
            rates,
            t0.elapsed().as_secs_f64()
        );
    }
}
