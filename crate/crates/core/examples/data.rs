//! Generates the synthetic transfer task and prints the split sizes.

use dpadapter::data::{make_synthetic_transfer, Relation, SyntheticConfig};

fn main() -> dpadapter::Result<()> {
    for relation in [Relation::IidSplit, Relation::Shifted] {
        let cfg = SyntheticConfig { relation, shift: 1.0, ..Default::default() };
        let task = make_synthetic_transfer(7, &cfg)?;
        println!(
            "{relation:?}: upstream {} / {}, downstream {} / {}, {} features, {} classes",
            task.upstream.len(),
            task.upstream_test.len(),
            task.downstream_train.len(),
            task.downstream_test.len(),
            task.upstream.input_dim(),
            task.upstream.num_classes
        );
    }
    Ok(())
}
