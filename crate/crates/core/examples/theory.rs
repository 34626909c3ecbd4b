//! A reduced run of the convergence checks.

use dpadapter::verify::{run_theory_checks, TheoryConfig};

fn main() -> dpadapter::Result<()> {
    let cfg = TheoryConfig { seeds: 8, iterations: 500, ..Default::default() };
    let report = run_theory_checks(&cfg)?;
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(())
}
