//! Fine-tunes a standard pre-trained model with each private algorithm.

use dpadapter::data::{make_synthetic_transfer, SyntheticConfig};
use dpadapter::finetune::{finetune, DpAlgorithm, DpSgdConfig, FinetuneConfig};
use dpadapter::pretrain::{train_standard, PretrainConfig};
use dpadapter::privacy::PrivacySpec;
use dpadapter::ModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dpadapter::Result<()> {
    let task = make_synthetic_transfer(5, &SyntheticConfig { n_down: 500, ..Default::default() })?;
    let sizes = [task.upstream.input_dim(), 32, task.upstream.num_classes];
    let init = ModelParams::init(&sizes, &mut ChaCha8Rng::seed_from_u64(6))?;
    let base = train_standard(&init, &task.upstream, &PretrainConfig { iterations: 500, ..Default::default() }, 7)?;
    let cfg = FinetuneConfig {
        dpsgd: DpSgdConfig { clip_norm: 1.0, lot_size: 16, epochs: 2, lr: 0.1, ..Default::default() },
        ..Default::default()
    };
    let spec = PrivacySpec::new(4.0, 1e-5)?;
    for alg in DpAlgorithm::ALL {
        let out =
            finetune(alg, &base, &task.downstream_train, &task.downstream_test, Some(&task.upstream), &spec, &cfg, 8)?;
        let last = out.history.last().expect("at least one epoch");
        println!("{:<9} accuracy {:.3}  spent eps {:.3}", alg.name(), last.test_accuracy, out.report.epsilon);
    }
    Ok(())
}
