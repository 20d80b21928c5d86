//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warfarin_xrl::cohort::{generate_cohort, CohortConfig};
use warfarin_xrl::distill::DistillDataset;
use warfarin_xrl::env::FEATURE_DIM;
use warfarin_xrl::ppo::PpoConfig;
use warfarin_xrl::{DenseNet, Patient};

pub fn cohort(size: usize) -> Vec<Patient> {
    generate_cohort(&CohortConfig {
        size,
        seed: 17,
        ..CohortConfig::default()
    })
    .expect("valid cohort config")
}

/// Actor with the default hidden layers and 21 outputs.
pub fn actor() -> DenseNet {
    let cfg = PpoConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    DenseNet::new(FEATURE_DIM, &cfg.hidden_layers, 21, cfg.output_init_scale, &mut rng)
        .expect("valid widths")
}

/// One pass worth of observations: 500 patients, 13 decisions each.
pub fn observation_batch() -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    Array2::from_shape_fn((500 * 13, FEATURE_DIM), |_| rng.random_range(0.0..1.5))
}

/// INR readings labeled by a three-band rule with 10% label noise.
pub fn distill_data(n: usize) -> DistillDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = (0..n)
        .map(|_| {
            let inr: f64 = rng.random_range(0.8..5.0);
            let label = if rng.random_bool(0.1) {
                [-0.5, 0.0, 0.6][rng.random_range(0..3)]
            } else if inr <= 2.27 {
                0.6
            } else if inr <= 2.94 {
                0.0
            } else {
                -0.5
            };
            (inr, label)
        })
        .collect();
    DistillDataset { rows }
}
