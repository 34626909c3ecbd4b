//! Tape gradients against central finite differences, and per-example replay
//! against the batch gradient.

mod common;

use common::{gradient_check_error, per_sample_mean_gap, random_problem};
use dpadapter::model::{loss_and_gradient, mean_loss};

#[test]
fn gradient_matches_finite_differences_on_100_seeds() {
    for seed in 0..100 {
        let (model, x, y) = random_problem(seed);
        let (loss, _) = loss_and_gradient(&model, &x, &y).unwrap();
        assert!((loss - mean_loss(&model, &x, &y).unwrap()).abs() < 1e-12);
        let rel = gradient_check_error(seed);
        assert!(rel <= 1e-4, "seed {seed}: relative error {rel:.3e}");
    }
}

#[test]
fn per_sample_mean_equals_batch_gradient() {
    for seed in 1000..1020 {
        let gap = per_sample_mean_gap(seed);
        assert!(gap <= 1e-10, "seed {seed}: gap {gap:e}");
    }
}
