//! Pre-trains the same initialisation with every method and reports clean and
//! noise-perturbed upstream accuracy.

use dpadapter::data::{make_synthetic_transfer, SyntheticConfig};
use dpadapter::pretrain::{pretrain, PretrainConfig, PretrainMethod};
use dpadapter::robustness::robust_accuracy;
use dpadapter::ModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dpadapter::Result<()> {
    let task = make_synthetic_transfer(1, &SyntheticConfig::default())?;
    let sizes = [task.upstream.input_dim(), 32, task.upstream.num_classes];
    let init = ModelParams::init(&sizes, &mut ChaCha8Rng::seed_from_u64(2))?;
    let cfg = PretrainConfig { iterations: 500, eta1: 100.0, gamma: 4.0, ..Default::default() };
    for method in
        [PretrainMethod::Scratch, PretrainMethod::Standard, PretrainMethod::VanillaSam, PretrainMethod::DpAdapter]
    {
        let model = pretrain(method, &init, &task.upstream, &cfg, 3)?;
        let r = robust_accuracy(&model, &task.upstream_test, 0.3, 10, 4)?;
        println!("{:<12} clean {:.3}  robust {:.3}", method.name(), r.clean_accuracy, r.robust_accuracy);
    }
    Ok(())
}
