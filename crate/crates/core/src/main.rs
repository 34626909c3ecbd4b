use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpadapter::harness::{self, ExperimentConfig};
use dpadapter::verify::{run_theory_checks, TheoryConfig};

#[derive(Parser)]
#[command(name = "dpadapter", version, about = "Robust pre-training and private fine-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Comma-separated seed list, replacing the config's.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn apply(self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.seeds {
            cfg.seeds = s;
        }
        if let Some(d) = self.output_dir {
            cfg.output_dir = d;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train, fine-tune and evaluate the configured grid.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// DPAdapter pre-training across perturbation radii.
    SweepGamma {
        config: PathBuf,
        /// Comma-separated radii, replacing `sweep.gammas`.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Numerical checks of the convergence statements.
    VerifyTheory {
        /// Optional TOML file with theory settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/theory")]
        output_dir: PathBuf,
    },
    /// Rebuild the summary and plot data of a finished run.
    Report { output_dir: PathBuf },
}

fn run(cli: Cli) -> dpadapter::Result<bool> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = overrides.apply(ExperimentConfig::load(&config)?);
            cfg.validate()?;
            let result = harness::run_experiment(&cfg)?;
            println!("{}", result.summary.to_markdown());
            let overruns = result.summary.budget_overruns();
            for c in &overruns {
                eprintln!(
                    "budget overrun: {} {} eps={} spent {}",
                    c.method, c.algorithm, c.epsilon, c.max_epsilon_spent
                );
            }
            let failures = result.summary.failures();
            if failures > 0 {
                eprintln!("{failures} run(s) failed; see metrics.csv");
            }
            Ok(overruns.is_empty() && failures == 0)
        }
        Command::SweepGamma { config, gammas, overrides } => {
            let cfg = overrides.apply(ExperimentConfig::load(&config)?);
            let gammas = gammas.unwrap_or_else(|| cfg.sweep.gammas.clone());
            let rows = harness::run_gamma_sweep(&cfg, &gammas)?;
            println!(
                "gamma,upstream_accuracy,upstream_robust_accuracy,downstream_dp_accuracy,downstream_robust_accuracy"
            );
            for r in harness::gamma_means(&rows) {
                println!(
                    "{},{:.4},{:.4},{:.4},{:.4}",
                    r.gamma,
                    r.upstream_accuracy,
                    r.upstream_robust_accuracy,
                    r.downstream_dp_accuracy,
                    r.downstream_robust_accuracy
                );
            }
            let sweep = cfg.output_dir.join("gamma_sweep.csv");
            harness::emit_plotdata(None, Some(&sweep), &cfg.output_dir.join("plots"))?;
            Ok(true)
        }
        Command::VerifyTheory { config, output_dir } => {
            let cfg = match config {
                Some(p) => toml::from_str::<TheoryConfig>(&std::fs::read_to_string(p)?)?,
                None => TheoryConfig::default(),
            };
            let report = run_theory_checks(&cfg)?;
            report.write(&output_dir)?;
            for c in &report.checks {
                println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(report.all_passed())
        }
        Command::Report { output_dir } => {
            let summary = harness::report(&output_dir)?;
            println!("{}", summary.to_markdown());
            Ok(summary.budget_overruns().is_empty())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
