//! Configuration-driven experiment runner.
//!
//! A run pre-trains one model per `(seed, method)`, stores it as a checkpoint,
//! fine-tunes it under every `(algorithm, epsilon)` cell, evaluates robustness
//! and writes:
//!
//! ```text
//! <output_dir>/config.toml        canonical copy of the parsed config
//! <output_dir>/metrics.csv        one row per pre-training run, fine-tuning epoch and final evaluation
//! <output_dir>/timings.csv        wall-clock seconds per job (kept out of metrics.csv so it stays reproducible)
//! <output_dir>/summary.csv|.md    methods x (algorithm, epsilon) accuracy table
//! <output_dir>/checkpoints/       <method>_s<seed>.ckpt
//! ```
//!
//! Config files are TOML with a mandatory `version = 1` key; unknown keys are
//! rejected. Every metrics row carries the SHA-256 of the canonical config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{make_synthetic_transfer, SyntheticConfig, TransferTask};
use crate::error::{Error, Result};
use crate::finetune::{finetune, DpAlgorithm, FinetuneConfig};
use crate::model::{accuracy, mean_loss, ModelParams};
use crate::pretrain::{pretrain, PretrainConfig, PretrainMethod};
use crate::privacy::{PrivacySpec, DEFAULT_DELTA};
use crate::robustness::{robust_accuracy, DEFAULT_NOISE_STD, DEFAULT_TRIALS};
use crate::stats;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub noise_std: f64,
    pub trials: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self { noise_std: DEFAULT_NOISE_STD, trials: DEFAULT_TRIALS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub epsilon: f64,
    pub algorithm: DpAlgorithm,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { gammas: vec![0.0, 0.5, 1.0, 2.0, 4.0], epsilon: 4.0, algorithm: DpAlgorithm::DpSgd }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/experiment")
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_workers() -> usize {
    1
}
fn default_methods() -> Vec<PretrainMethod> {
    vec![PretrainMethod::Scratch, PretrainMethod::Standard, PretrainMethod::VanillaSam, PretrainMethod::DpAdapter]
}
fn default_algorithms() -> Vec<DpAlgorithm> {
    DpAlgorithm::ALL.to_vec()
}
fn default_epsilons() -> Vec<f64> {
    vec![1.0, 4.0]
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<PretrainMethod>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<DpAlgorithm>,
    /// `inf` requests a non-private reference run.
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Hidden layer widths of the MLP.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub robustness: RobustnessConfig,
    #[serde(default)]
    pub task: SyntheticConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            name: default_name(),
            output_dir: default_output_dir(),
            seeds: default_seeds(),
            workers: default_workers(),
            methods: default_methods(),
            algorithms: default_algorithms(),
            epsilons: default_epsilons(),
            delta: default_delta(),
            hidden: default_hidden(),
            robustness: RobustnessConfig::default(),
            task: SyntheticConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("version: expected {CONFIG_VERSION}, got {}", self.version)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers: must be at least 1".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|&&e| !(e > 0.0)) {
            return Err(Error::Config(format!("epsilons: {e} is not positive")));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden: layer widths must be positive".into()));
        }
        self.pretrain.validate().map_err(|e| Error::Config(format!("pretrain: {e}")))?;
        self.finetune.dpsgd.validate().map_err(|e| Error::Config(format!("finetune.dpsgd: {e}")))?;
        PrivacySpec::new(1.0, self.delta).map_err(|e| Error::Config(format!("delta: {e}")))?;
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.task.d_in).chain(self.hidden.iter().copied()).chain([self.task.k]).collect()
    }

    fn spec(&self, epsilon: f64) -> PrivacySpec {
        PrivacySpec { epsilon, delta: self.delta }
    }
}

/// Independent sub-seed for one purpose of a run.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_TASK: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_PRETRAIN: u64 = 3;
const STREAM_FINETUNE: u64 = 4;
const STREAM_ROBUST: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    /// `pretrain`, `finetune` (per epoch) or `final`.
    pub phase: String,
    pub method: String,
    pub algorithm: String,
    pub epsilon: f64,
    pub epoch: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub robust_accuracy: Option<f64>,
    pub epsilon_spent: Option<f64>,
    pub clip_norm: Option<f64>,
    pub sigma: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run_id: String,
    pub phase: String,
    pub seconds: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::Config(format!("workers: {e}")))
}

struct Pretrained {
    seed: u64,
    method: PretrainMethod,
    model: Result<ModelParams>,
    row: MetricsRow,
    seconds: f64,
}

fn pretrain_cell(
    cfg: &ExperimentConfig,
    hash: &str,
    task: &TransferTask,
    seed: u64,
    method: PretrainMethod,
) -> Pretrained {
    let start = Instant::now();
    let run_id = format!("{}-s{seed}", method.name());
    let outcome = (|| {
        let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_INIT));
        let init = ModelParams::init(&cfg.layer_sizes(), &mut init_rng)?;
        let model = pretrain(method, &init, &task.upstream, &cfg.pretrain, sub_seed(seed, STREAM_PRETRAIN))?;
        let loss = mean_loss(&model, &task.upstream.features, &task.upstream.labels)?;
        let robust = robust_accuracy(
            &model,
            &task.upstream_test,
            cfg.robustness.noise_std,
            cfg.robustness.trials,
            sub_seed(seed, STREAM_ROBUST),
        )?;
        Ok((model, loss, robust))
    })();
    let mut row = MetricsRow {
        run_id,
        config_hash: hash.to_string(),
        seed,
        phase: "pretrain".into(),
        method: method.name().into(),
        algorithm: String::new(),
        epsilon: f64::INFINITY,
        epoch: cfg.pretrain.iterations,
        loss: None,
        accuracy: None,
        robust_accuracy: None,
        epsilon_spent: None,
        clip_norm: None,
        sigma: None,
        status: "ok".into(),
    };
    let model = match outcome {
        Ok((model, loss, robust)) => {
            row.loss = Some(loss);
            row.accuracy = Some(robust.clean_accuracy);
            row.robust_accuracy = Some(robust.robust_accuracy);
            Ok(model)
        }
        Err(e) => {
            row.status = format!("failed: {e}");
            Err(e)
        }
    };
    Pretrained { seed, method, model, row, seconds: start.elapsed().as_secs_f64() }
}

struct FinetuneCell {
    rows: Vec<MetricsRow>,
    timing: TimingRow,
}

#[allow(clippy::too_many_arguments)]
fn finetune_cell(
    cfg: &ExperimentConfig,
    hash: &str,
    task: &TransferTask,
    seed: u64,
    method: PretrainMethod,
    model: &ModelParams,
    algorithm: DpAlgorithm,
    epsilon: f64,
) -> FinetuneCell {
    let start = Instant::now();
    let run_id = format!("{}-{}-eps{epsilon}-s{seed}", method.name(), algorithm.name());
    let base = MetricsRow {
        run_id: run_id.clone(),
        config_hash: hash.to_string(),
        seed,
        phase: "finetune".into(),
        method: method.name().into(),
        algorithm: algorithm.name().into(),
        epsilon,
        epoch: 0,
        loss: None,
        accuracy: None,
        robust_accuracy: None,
        epsilon_spent: None,
        clip_norm: None,
        sigma: None,
        status: "ok".into(),
    };
    let outcome = (|| {
        let out = finetune(
            algorithm,
            model,
            &task.downstream_train,
            &task.downstream_test,
            Some(&task.upstream),
            &cfg.spec(epsilon),
            &cfg.finetune,
            sub_seed(seed, STREAM_FINETUNE),
        )?;
        let robust = robust_accuracy(
            &out.model,
            &task.downstream_test,
            cfg.robustness.noise_std,
            cfg.robustness.trials,
            sub_seed(seed, STREAM_ROBUST),
        )?;
        Ok::<_, Error>((out, robust))
    })();
    let rows = match outcome {
        Ok((out, robust)) => {
            let mut rows: Vec<MetricsRow> = out
                .history
                .iter()
                .map(|h| MetricsRow {
                    epoch: h.epoch + 1,
                    loss: Some(h.train_loss),
                    accuracy: Some(h.test_accuracy),
                    epsilon_spent: Some(h.epsilon),
                    clip_norm: Some(h.clip_norm),
                    sigma: Some(h.sigma),
                    ..base.clone()
                })
                .collect();
            let last = out.history.last();
            rows.push(MetricsRow {
                phase: "final".into(),
                epoch: out.history.len(),
                loss: last.map(|h| h.train_loss),
                accuracy: Some(robust.clean_accuracy),
                robust_accuracy: Some(robust.robust_accuracy),
                epsilon_spent: Some(out.report.epsilon),
                ..base.clone()
            });
            rows
        }
        Err(e) => {
            warn!("{run_id} failed: {e}");
            vec![MetricsRow { phase: "final".into(), status: format!("failed: {e}"), ..base }]
        }
    };
    FinetuneCell {
        rows,
        timing: TimingRow { run_id, phase: "finetune".into(), seconds: start.elapsed().as_secs_f64() },
    }
}

fn failed_pretrain_rows(cfg: &ExperimentConfig, p: &Pretrained) -> Vec<MetricsRow> {
    let mut out = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &epsilon in &cfg.epsilons {
            out.push(MetricsRow {
                run_id: format!("{}-{}-eps{epsilon}-s{}", p.method.name(), algorithm.name(), p.seed),
                phase: "final".into(),
                algorithm: algorithm.name().into(),
                epsilon,
                epoch: 0,
                loss: None,
                accuracy: None,
                robust_accuracy: None,
                status: "failed: pre-training failed".into(),
                ..p.row.clone()
            });
        }
    }
    out
}

/// Mean test accuracy of one (method, algorithm, epsilon) cell over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub method: String,
    pub algorithm: String,
    pub epsilon: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_robust_accuracy: f64,
    pub max_epsilon_spent: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cells: Vec<SummaryCell>,
}

impl Summary {
    pub fn from_rows(rows: &[MetricsRow]) -> Self {
        // (accuracies, robust accuracies, spent budgets, failures) per cell.
        type Acc = (Vec<f64>, Vec<f64>, Vec<f64>, usize);
        let mut groups: BTreeMap<(String, String, u64), Acc> = BTreeMap::new();
        let mut order = Vec::new();
        for r in rows.iter().filter(|r| r.phase == "final") {
            let key = (r.method.clone(), r.algorithm.clone(), r.epsilon.to_bits());
            let entry = groups.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                Default::default()
            });
            match (r.status.as_str(), r.accuracy) {
                ("ok", Some(acc)) => {
                    entry.0.push(acc);
                    entry.1.push(r.robust_accuracy.unwrap_or(f64::NAN));
                    entry.2.push(r.epsilon_spent.unwrap_or(f64::NAN));
                }
                _ => entry.3 += 1,
            }
        }
        let cells = order
            .into_iter()
            .map(|key| {
                let (acc, rob, spent, failed) = &groups[&key];
                SummaryCell {
                    method: key.0,
                    algorithm: key.1,
                    epsilon: f64::from_bits(key.2),
                    mean_accuracy: if acc.is_empty() { f64::NAN } else { stats::mean(acc) },
                    std_accuracy: stats::std_dev(acc),
                    mean_robust_accuracy: if rob.is_empty() { f64::NAN } else { stats::mean(rob) },
                    max_epsilon_spent: spent.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    n_ok: acc.len(),
                    n_failed: *failed,
                }
            })
            .collect();
        Self { cells }
    }

    pub fn cell(&self, method: &str, algorithm: &str, epsilon: f64) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.method == method && c.algorithm == algorithm && c.epsilon == epsilon)
    }

    /// Cells whose spent budget exceeds the configured one.
    pub fn budget_overruns(&self) -> Vec<&SummaryCell> {
        self.cells.iter().filter(|c| c.n_ok > 0 && c.max_epsilon_spent > c.epsilon * (1.0 + 1e-9)).collect()
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().map(|c| c.n_failed).sum()
    }

    /// Methods as rows, `(algorithm, epsilon)` as columns.
    pub fn to_markdown(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut columns: Vec<(&str, f64)> = Vec::new();
        for c in &self.cells {
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
            if !columns.iter().any(|(a, e)| *a == c.algorithm && *e == c.epsilon) {
                columns.push((&c.algorithm, c.epsilon));
            }
        }
        let mut out = String::from("| method |");
        for (a, e) in &columns {
            let _ = write!(out, " {a} eps={e} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(columns.len()));
        out.push('\n');
        for m in &methods {
            let _ = write!(out, "| {m} |");
            for (a, e) in &columns {
                match self.cell(m, a, *e) {
                    Some(c) if c.n_ok > 0 => {
                        let _ = write!(out, " {:.4} ± {:.4}", c.mean_accuracy, c.std_accuracy);
                        if c.n_failed > 0 {
                            let _ = write!(out, " ({} failed)", c.n_failed);
                        }
                        out.push_str(" |");
                    }
                    Some(_) => out.push_str(" failed |"),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join("summary.csv"), &self.cells)?;
        fs::write(dir.join("summary.md"), self.to_markdown())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub metrics: Vec<MetricsRow>,
    pub summary: Summary,
}

/// Runs the full grid and writes all artifacts under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let hash = config.hash();
    let dir = config.output_dir.clone();
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("config.toml"), config.to_toml())?;

    let pool = pool(config.workers)?;
    let tasks: Vec<TransferTask> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&s| make_synthetic_transfer(sub_seed(s, STREAM_TASK), &config.task))
            .collect::<Result<Vec<_>>>()
    })?;

    let jobs: Vec<(usize, PretrainMethod)> =
        (0..config.seeds.len()).flat_map(|i| config.methods.iter().map(move |&m| (i, m))).collect();
    let pretrained: Vec<Pretrained> = pool.install(|| {
        jobs.par_iter().map(|&(i, m)| pretrain_cell(config, &hash, &tasks[i], config.seeds[i], m)).collect()
    });
    for p in &pretrained {
        if let Ok(model) = &p.model {
            let path = dir.join("checkpoints").join(format!("{}_s{}.ckpt", p.method.name(), p.seed));
            checkpoint::save(&path, model, &hash)?;
        }
        info!("pre-trained {} in {:.1}s", p.row.run_id, p.seconds);
    }

    let mut cells = Vec::new();
    for (pi, &(ti, _)) in jobs.iter().enumerate() {
        for &a in &config.algorithms {
            for &e in &config.epsilons {
                cells.push((pi, ti, a, e));
            }
        }
    }
    let finetuned: Vec<Option<FinetuneCell>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(pi, ti, a, e)| {
                let p = &pretrained[pi];
                p.model.as_ref().ok().map(|m| finetune_cell(config, &hash, &tasks[ti], p.seed, p.method, m, a, e))
            })
            .collect()
    });

    let mut metrics = Vec::new();
    let mut timings = Vec::new();
    for p in &pretrained {
        metrics.push(p.row.clone());
        timings.push(TimingRow { run_id: p.row.run_id.clone(), phase: "pretrain".into(), seconds: p.seconds });
        if p.model.is_err() {
            metrics.extend(failed_pretrain_rows(config, p));
        }
    }
    for cell in finetuned.into_iter().flatten() {
        metrics.extend(cell.rows);
        timings.push(cell.timing);
    }
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    write_csv(&dir.join("timings.csv"), &timings)?;
    let summary = Summary::from_rows(&metrics);
    summary.write(&dir)?;
    Ok(ExperimentResult { output_dir: dir, config_hash: hash, metrics, summary })
}

/// Regenerates the summary (and plot data) from an existing output directory.
pub fn report(dir: &Path) -> Result<Summary> {
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    let summary = Summary::from_rows(&rows);
    summary.write(dir)?;
    let sweep = dir.join("gamma_sweep.csv");
    emit_plotdata(Some(&dir.join("metrics.csv")), sweep.exists().then_some(sweep.as_path()), &dir.join("plots"))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub config_hash: String,
    pub seed: u64,
    pub gamma: f64,
    pub upstream_accuracy: f64,
    pub upstream_robust_accuracy: f64,
    pub downstream_dp_accuracy: f64,
    pub downstream_robust_accuracy: f64,
}

fn gamma_cell(cfg: &ExperimentConfig, hash: &str, task: &TransferTask, seed: u64, gamma: f64) -> Result<GammaRow> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_INIT));
    let init = ModelParams::init(&cfg.layer_sizes(), &mut init_rng)?;
    let pcfg = PretrainConfig { gamma, ..cfg.pretrain.clone() };
    let model = pretrain(PretrainMethod::DpAdapter, &init, &task.upstream, &pcfg, sub_seed(seed, STREAM_PRETRAIN))?;
    let robust_seed = sub_seed(seed, STREAM_ROBUST);
    let (noise, trials) = (cfg.robustness.noise_std, cfg.robustness.trials);
    let up = robust_accuracy(&model, &task.upstream_test, noise, trials, robust_seed)?;
    let out = finetune(
        cfg.sweep.algorithm,
        &model,
        &task.downstream_train,
        &task.downstream_test,
        Some(&task.upstream),
        &cfg.spec(cfg.sweep.epsilon),
        &cfg.finetune,
        sub_seed(seed, STREAM_FINETUNE),
    )?;
    let down = robust_accuracy(&out.model, &task.downstream_test, noise, trials, robust_seed)?;
    Ok(GammaRow {
        config_hash: hash.to_string(),
        seed,
        gamma,
        upstream_accuracy: up.clean_accuracy,
        upstream_robust_accuracy: up.robust_accuracy,
        downstream_dp_accuracy: accuracy(&out.model, &task.downstream_test.features, &task.downstream_test.labels)?,
        downstream_robust_accuracy: down.robust_accuracy,
    })
}

/// DPAdapter pre-training at each `gamma`, followed by private fine-tuning
/// with the sweep's algorithm and budget. Writes `gamma_sweep.csv`.
pub fn run_gamma_sweep(config: &ExperimentConfig, gammas: &[f64]) -> Result<Vec<GammaRow>> {
    config.validate()?;
    if gammas.len() < 3 {
        return Err(Error::Config(format!("a gamma sweep needs at least 3 values, got {}", gammas.len())));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g >= 0.0)) {
        return Err(Error::Config(format!("gamma {g} is negative")));
    }
    let hash = config.hash();
    fs::create_dir_all(&config.output_dir)?;
    let pool = pool(config.workers)?;
    let rows = pool.install(|| {
        let tasks = config
            .seeds
            .par_iter()
            .map(|&s| make_synthetic_transfer(sub_seed(s, STREAM_TASK), &config.task))
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, f64)> =
            (0..config.seeds.len()).flat_map(|i| gammas.iter().map(move |&g| (i, g))).collect();
        jobs.par_iter()
            .map(|&(i, g)| gamma_cell(config, &hash, &tasks[i], config.seeds[i], g))
            .collect::<Result<Vec<_>>>()
    })?;
    write_csv(&config.output_dir.join("gamma_sweep.csv"), &rows)?;
    Ok(rows)
}

/// Per-gamma means over seeds, in increasing gamma order.
pub fn gamma_means(rows: &[GammaRow]) -> Vec<GammaRow> {
    let mut gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    gammas
        .into_iter()
        .map(|g| {
            let sel: Vec<&GammaRow> = rows.iter().filter(|r| r.gamma == g).collect();
            let avg = |f: fn(&GammaRow) -> f64| stats::mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            GammaRow {
                config_hash: sel[0].config_hash.clone(),
                seed: 0,
                gamma: g,
                upstream_accuracy: avg(|r| r.upstream_accuracy),
                upstream_robust_accuracy: avg(|r| r.upstream_robust_accuracy),
                downstream_dp_accuracy: avg(|r| r.downstream_dp_accuracy),
                downstream_robust_accuracy: avg(|r| r.downstream_robust_accuracy),
            }
        })
        .collect()
}

struct Table {
    headers: csv::StringRecord,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let records = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { headers, records })
    }

    fn column(&self, name: &str, source: &Path) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{} has no column `{name}`", source.display())))
    }

    fn floats(&self, name: &str, source: &Path) -> Result<Vec<f64>> {
        let col = self.column(name, source)?;
        self.records
            .iter()
            .map(|r| {
                r[col]
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("`{name}` value `{}` is not a number", &r[col])))
            })
            .collect()
    }
}

fn write_table(path: &Path, headers: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Group means of `columns` keyed by `gamma`, ascending.
fn means_by_gamma(gamma: &[f64], columns: &[Vec<f64>]) -> Vec<Vec<String>> {
    let mut keys = gamma.to_vec();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    keys.iter()
        .map(|&g| {
            let idx: Vec<usize> = (0..gamma.len()).filter(|&i| gamma[i] == g).collect();
            std::iter::once(g.to_string())
                .chain(columns.iter().map(|c| stats::mean(&idx.iter().map(|&i| c[i]).collect::<Vec<_>>()).to_string()))
                .collect()
        })
        .collect()
}

/// Writes plot-ready CSVs: `robust_vs_private.csv` (robust vs private accuracy
/// per gamma), `robustness_transfer.csv` (upstream vs downstream robust accuracy,
/// sorted by the former), `gamma_means.csv` (all gamma-sweep means) and
/// `finetune_curves.csv` (mean test accuracy per fine-tuning epoch).
pub fn emit_plotdata(metrics: Option<&Path>, sweep: Option<&Path>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if let Some(src) = sweep {
        let t = Table::read(src)?;
        let gamma = t.floats("gamma", src)?;
        let up_acc = t.floats("upstream_accuracy", src)?;
        let up_rob = t.floats("upstream_robust_accuracy", src)?;
        let down_dp = t.floats("downstream_dp_accuracy", src)?;
        let down_rob = t.floats("downstream_robust_accuracy", src)?;

        let robust_vs_private = out_dir.join("robust_vs_private.csv");
        write_table(
            &robust_vs_private,
            &["gamma", "upstream_robust_accuracy", "downstream_dp_accuracy"],
            &means_by_gamma(&gamma, &[up_rob.clone(), down_dp.clone()]),
        )?;
        let mut pairs: Vec<(f64, f64)> = up_rob.iter().copied().zip(down_rob).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let transfer = out_dir.join("robustness_transfer.csv");
        write_table(
            &transfer,
            &["upstream_robust_accuracy", "downstream_robust_accuracy"],
            &pairs.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]).collect::<Vec<_>>(),
        )?;
        let means = out_dir.join("gamma_means.csv");
        write_table(
            &means,
            &["gamma", "upstream_accuracy", "upstream_robust_accuracy", "downstream_dp_accuracy"],
            &means_by_gamma(&gamma, &[up_acc, up_rob, down_dp]),
        )?;
        written.extend([robust_vs_private, transfer, means]);
    }
    if let Some(src) = metrics {
        let t = Table::read(src)?;
        let phase = t.column("phase", src)?;
        let method = t.column("method", src)?;
        let algorithm = t.column("algorithm", src)?;
        let epsilon = t.column("epsilon", src)?;
        let epoch = t.column("epoch", src)?;
        let acc = t.column("accuracy", src)?;
        type Key = (String, String, String, usize);
        let mut groups: Vec<(Key, Vec<f64>)> = Vec::new();
        for r in t.records.iter().filter(|r| &r[phase] == "finetune") {
            let e: usize = r[epoch].parse().map_err(|_| Error::Schema(format!("bad epoch `{}`", &r[epoch])))?;
            let Ok(a) = r[acc].parse::<f64>() else { continue };
            let key = (r[method].to_string(), r[algorithm].to_string(), r[epsilon].to_string(), e);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(a),
                None => groups.push((key, vec![a])),
            }
        }
        let curves = out_dir.join("finetune_curves.csv");
        write_table(
            &curves,
            &["method", "algorithm", "epsilon", "epoch", "mean_accuracy"],
            &groups
                .iter()
                .map(|((m, a, e, ep), v)| {
                    vec![m.clone(), a.clone(), e.clone(), ep.to_string(), stats::mean(v).to_string()]
                })
                .collect::<Vec<_>>(),
        )?;
        written.push(curves);
    }
    Ok(written)
}
