//! Exactness of the decoupled-batch update and its degenerate modes.

use dpadapter::data::{make_synthetic_transfer, Dataset, SyntheticConfig};
use dpadapter::model::loss_and_gradient;
use dpadapter::pretrain::{
    dpadapter_step, perturbed_gradient, pretrain, sample_batch, train_dpadapter, train_standard, train_vanilla_sam,
    warmup, worst_case_perturbation_steps, PretrainConfig, PretrainMethod, SgdMomentum,
};
use dpadapter::{tensor, ModelParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn upstream(seed: u64) -> Dataset {
    let cfg =
        SyntheticConfig { n_up: 240, n_down: 60, n_up_test: 60, n_down_test: 60, d_in: 6, k: 3, ..Default::default() };
    make_synthetic_transfer(seed, &cfg).unwrap().upstream
}

fn model(data: &Dataset, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::init(&[data.input_dim(), 10, data.num_classes], &mut rng).unwrap()
}

fn short_config() -> PretrainConfig {
    PretrainConfig { m1: 64, m2: 16, iterations: 60, warmup_epochs: 1, gamma: 1.5, eta1: 0.5, ..Default::default() }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn zero_update_rate_is_the_identity() {
    let data = upstream(1);
    let theta = model(&data, 2);
    let cfg = PretrainConfig { eta2: 0.0, ..short_config() };
    let (x1, y1) = data.batch(&(0..64).collect::<Vec<_>>());
    let (x2, y2) = data.batch(&(100..116).collect::<Vec<_>>());
    let next = dpadapter_step(&theta, (&x1, &y1), (&x2, &y2), &cfg).unwrap();
    assert_eq!(bits(next.as_slice()), bits(theta.as_slice()));
}

#[test]
fn update_is_taken_from_the_unperturbed_point() {
    // Perturb, step, un-perturb must equal a plain step with the perturbed gradient.
    let data = upstream(3);
    let theta = model(&data, 4);
    let before = theta.clone();
    let cfg = short_config();
    let (x1, y1) = data.batch(&(0..64).collect::<Vec<_>>());
    let (x2, y2) = data.batch(&(64..80).collect::<Vec<_>>());
    let (_, g) = perturbed_gradient(&theta, (&x1, &y1), (&x2, &y2), &cfg).unwrap();
    let next = dpadapter_step(&theta, (&x1, &y1), (&x2, &y2), &cfg).unwrap();
    let expected: Vec<f64> = theta.as_slice().iter().zip(&g).map(|(t, gi)| t - cfg.eta2 * gi).collect();
    assert_eq!(bits(next.as_slice()), bits(&expected));
    assert_eq!(bits(theta.as_slice()), bits(before.as_slice()));
}

#[test]
fn zero_radius_step_is_plain_sgd() {
    let data = upstream(5);
    let theta = model(&data, 6);
    let cfg = PretrainConfig { gamma: 0.0, ..short_config() };
    let (x1, y1) = data.batch(&(0..64).collect::<Vec<_>>());
    let (x2, y2) = data.batch(&(64..80).collect::<Vec<_>>());
    let next = dpadapter_step(&theta, (&x1, &y1), (&x2, &y2), &cfg).unwrap();
    let (_, g) = loss_and_gradient(&theta, &x2, &y2).unwrap();
    let expected: Vec<f64> = theta.as_slice().iter().zip(&g).map(|(t, gi)| t - cfg.eta2 * gi).collect();
    assert_eq!(bits(next.as_slice()), bits(&expected));
}

#[test]
fn zero_radius_training_equals_standard_training() {
    let data = upstream(7);
    let init = model(&data, 8);
    let cfg = PretrainConfig { gamma: 0.0, ..short_config() };
    for seed in 0..3 {
        let standard = train_standard(&init, &data, &cfg, seed).unwrap();
        let adapter = train_dpadapter(&init, &data, &cfg, seed).unwrap();
        let sam = train_vanilla_sam(&init, &data, &cfg, seed).unwrap();
        assert_eq!(bits(adapter.as_slice()), bits(standard.as_slice()));
        assert_eq!(bits(sam.as_slice()), bits(standard.as_slice()));
    }
}

#[test]
fn shared_batch_mode_reproduces_vanilla_sam() {
    let data = upstream(9);
    let init = model(&data, 10);
    let cfg = PretrainConfig { shared_batch: true, m1: 16, ..short_config() };
    for seed in 0..3 {
        let adapter = pretrain(PretrainMethod::DpAdapter, &init, &data, &cfg, seed).unwrap();
        let sam = train_vanilla_sam(&init, &data, &cfg, seed).unwrap();
        assert_eq!(bits(adapter.as_slice()), bits(sam.as_slice()));
    }
}

/// Vanilla SAM written out step by step from the public building blocks.
fn hand_rolled_sam(init: &ModelParams, data: &Dataset, cfg: &PretrainConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = warmup(init, data, cfg, &mut rng).unwrap();
    let mut opt = SgdMomentum::new(params.dim(), cfg.momentum, cfg.weight_decay);
    for it in 0..cfg.iterations {
        let lr = cfg.lr_schedule.rate(cfg.eta2, it, cfg.iterations);
        let idx = sample_batch(&mut rng, data.len(), cfg.m2);
        let (x, y) = data.batch(&idx);
        let delta = worst_case_perturbation_steps(&params, &x, &y, cfg.eta1, cfg.gamma, cfg.inner_steps).unwrap();
        let shifted: Vec<f64> = params.as_slice().iter().zip(&delta).map(|(t, d)| t + d).collect();
        let (_, g) = loss_and_gradient(&params.unflatten(shifted).unwrap(), &x, &y).unwrap();
        opt.step(params.as_mut_slice(), &g, lr);
    }
    params
}

#[test]
fn vanilla_sam_trajectory_matches_reference_loop() {
    let data = upstream(11);
    let init = model(&data, 12);
    let cfg = short_config();
    for seed in 0..3 {
        let library = train_vanilla_sam(&init, &data, &cfg, seed).unwrap();
        let reference = hand_rolled_sam(&init, &data, &cfg, seed);
        assert_eq!(bits(library.as_slice()), bits(reference.as_slice()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbation_stays_in_the_ball(
        seed in 0u64..1000,
        gamma in 0.0f64..20.0,
        eta1 in 0.0f64..500.0,
        steps in 1usize..4,
    ) {
        let data = upstream(seed % 7);
        let theta = model(&data, seed);
        let idx: Vec<usize> = (0..32).map(|i| (i * 7 + seed as usize) % data.len()).collect();
        let (x, y) = data.batch(&idx);
        let delta = worst_case_perturbation_steps(&theta, &x, &y, eta1, gamma, steps).unwrap();
        prop_assert!(tensor::l2_norm(&delta) <= gamma + 1e-12);
    }
}
