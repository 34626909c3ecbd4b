//! Robust accuracy and parameter-sensitivity estimates for a trained model.

use dpadapter::data::{make_synthetic_transfer, SyntheticConfig};
use dpadapter::pretrain::{train_standard, PretrainConfig};
use dpadapter::robustness::evaluate_robustness;
use dpadapter::ModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dpadapter::Result<()> {
    let task = make_synthetic_transfer(9, &SyntheticConfig::default())?;
    let sizes = [task.upstream.input_dim(), 32, task.upstream.num_classes];
    let init = ModelParams::init(&sizes, &mut ChaCha8Rng::seed_from_u64(10))?;
    let model = train_standard(&init, &task.upstream, &PretrainConfig { iterations: 500, ..Default::default() }, 11)?;
    for noise in [0.0, 0.1, 0.3, 0.5] {
        let r = evaluate_robustness(&model, &task.upstream_test, noise, 10, 50, 12)?;
        println!(
            "noise std {noise:.1}: clean {:.3}, robust {:.3}, rho {:.3?}",
            r.clean_accuracy, r.robust_accuracy, r.rho_estimate
        );
    }
    Ok(())
}
