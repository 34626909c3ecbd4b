//! Runs a two-seed grid from an inline config and prints the summary table.

use dpadapter::harness::{run_experiment, ExperimentConfig};

fn main() -> dpadapter::Result<()> {
    let dir = std::env::temp_dir().join("dpadapter-example");
    let mut cfg = ExperimentConfig::from_toml(
        r#"
version = 1
name = "example"
seeds = [0, 1]
epsilons = [4.0]
algorithms = ["dpsgd", "gep"]

[pretrain]
iterations = 300
eta1 = 100.0
gamma = 4.0

[finetune.dpsgd]
clip_norm = 1.0
lot_size = 16
epochs = 2
lr = 0.1
"#,
    )?;
    cfg.output_dir = dir;
    let result = run_experiment(&cfg)?;
    println!("{}", result.summary.to_markdown());
    println!("artifacts in {}", result.output_dir.display());
    Ok(())
}
