//! The experiment commands behind the `byzgrad` binary.
//!
//! Every command reads an [`ExperimentConfig`], resolves the master seed
//! (`--seed` flag over `seed` key), and derives all randomness from it
//! through fixed stream labels, so a rerun with the same config and seed
//! reproduces the same bytes (wall-clock columns aside) and remote workers
//! agree with the in-process simulator without any shared state.

use crate::byzantine::{ByzError, SimWorkerPool};
use crate::conclab::{
    fit_scaling, lower_bound_event_rate, spectral_norm_trials, ConcError, EVENT_CSV_HEADER,
    FIT_CSV_HEADER, SUMMARY_CSV_HEADER, TRIALS_CSV_HEADER,
};
use crate::config::{
    AttackConfig, ConfigError, ExperimentConfig, MethodName, ModelBlock, SEED_CELL, SEED_DATA,
    SEED_EVENT, SEED_POOL,
};
use crate::learning::{
    auto_eta, linreg_generate, train, Dataset, LearnError, RoundMetrics, TrainConfig,
};
use crate::metrics::{bench_row, metrics_row, BENCH_CSV_HEADER, METRICS_CSV_HEADER};
use crate::numerics::{derive_seed, sample_gaussian, RngStream};
use crate::transport::{bind, run_worker, LearnerServer, TransportError, WorkerSetup};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Byzantine(#[from] ByzError),
    #[error(transparent)]
    Conc(#[from] ConcError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 0 success, 2 config error, 3 transport error,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) | CliError::Conc(_) => 2,
            CliError::Transport(_) => 3,
            _ => 1,
        }
    }
}

/// True parameter vector; a function of `model.theta_seed` only, so sweeps
/// over the master seed share a target.
pub fn theta_star(model: &ModelBlock) -> Vec<f64> {
    let mut rng = RngStream::new(model.theta_seed, 0).rng();
    sample_gaussian(model.d, &mut rng)
}

/// Regenerate the experiment dataset from the config and master seed. Both
/// the simulator and every remote worker call this, which is what lets a
/// worker own its shard without any data ever crossing the wire.
pub fn build_dataset(model: &ModelBlock, master: u64) -> Dataset {
    let theta = theta_star(model);
    let stream = RngStream::new(master, 0).child(SEED_DATA);
    linreg_generate(model.d, model.n_total, &theta, model.noise, &stream)
}

/// Attack/pool randomness root for a given master seed.
pub fn pool_stream(master: u64) -> RngStream {
    RngStream::new(master, 0).child(SEED_POOL)
}

fn resolve_eta(config: &ExperimentConfig, data: &Dataset) -> Result<f64, CliError> {
    match config.train.eta {
        Some(eta) => Ok(eta),
        None => Ok(auto_eta(data)?),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn metrics_csv(experiment: &str, rows: &[RoundMetrics]) -> String {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(METRICS_CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&metrics_row(experiment, row));
        text.push('\n');
    }
    text
}

/// Run `f` inside a bounded rayon pool when `--parallel` is given; the
/// global pool otherwise.
fn with_pool<R: Send>(parallel: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match parallel {
        None => Ok(f()),
        Some(0) => Err(CliError::Invalid("--parallel must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Invalid(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Simulate a full training run and write one metrics row per round.
pub fn cmd_simulate(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    parallel: Option<usize>,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_file(config_path)?;
    let master = config.master_seed(seed)?;
    let out_path = config.output_path(out)?;
    let model = config.model()?.clone();
    let rounds = config.rounds()?;

    let result = with_pool(parallel, || -> Result<_, CliError> {
        let data = build_dataset(&model, master);
        let eta = resolve_eta(&config, &data)?;
        let train_config = TrainConfig {
            eta,
            rounds,
            aggregator: config.aggregator(master)?,
            radius: config.train.radius,
            theta_star: Some(data.theta_star.clone()),
        };
        let mut pool = SimWorkerPool::new(
            data,
            model.m,
            config.attack_spec(),
            config.schedule(master),
            pool_stream(master),
        )?;
        Ok(train(&mut pool, &train_config)?)
    })??;

    write_text(&out_path, &metrics_csv(&config.experiment, &result.metrics))
}

/// One sweep cell: an aggregation method at a fault budget, one repetition.
struct BenchCell {
    method: MethodName,
    q: usize,
    /// Derived from (master, q, repetition) but not the method, so the same
    /// data and attack bytes hit every aggregator — paired comparisons.
    cell_seed: u64,
}

fn run_bench_cell(
    config: &ExperimentConfig,
    model: &ModelBlock,
    rounds: usize,
    cell: &BenchCell,
) -> Result<String, CliError> {
    let data = build_dataset(model, cell.cell_seed);
    let eta = resolve_eta(config, &data)?;
    let train_config = TrainConfig {
        eta,
        rounds,
        aggregator: config.aggregator_for(cell.method, cell.q, cell.cell_seed)?,
        radius: config.train.radius,
        theta_star: Some(data.theta_star.clone()),
    };
    let mut pool = SimWorkerPool::new(
        data,
        model.m,
        config.attack_spec(),
        config.schedule_with_q(cell.q, cell.cell_seed),
        pool_stream(cell.cell_seed),
    )?;
    let result = train(&mut pool, &train_config)?;
    let final_error = result.metrics.last().map_or(f64::NAN, |r| r.error);
    Ok(bench_row(
        &config.experiment,
        cell.method.as_str(),
        cell.q,
        cell.cell_seed,
        final_error,
    ))
}

/// Sweep aggregators over fault budgets and write one row of final error per
/// (aggregator, q, seed) cell.
pub fn cmd_bench_agg(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    parallel: Option<usize>,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_file(config_path)?;
    let master = config.master_seed(seed)?;
    let out_path = config.output_path(out)?;
    let model = config.model()?.clone();
    let rounds = config.rounds()?;
    let bench = config.bench()?.clone();

    let mut cells = Vec::new();
    for &q in &bench.q_values {
        for rep in 0..bench.seeds {
            let cell_seed = derive_seed(master, &[SEED_CELL, q as u64, rep as u64]);
            for &method in &bench.aggregators {
                cells.push(BenchCell {
                    method,
                    q,
                    cell_seed,
                });
            }
        }
    }

    let rows = with_pool(parallel, || {
        cells
            .par_iter()
            .map(|cell| run_bench_cell(&config, &model, rounds, cell))
            .collect::<Result<Vec<String>, CliError>>()
    })??;

    let mut text = String::with_capacity(48 * (rows.len() + 1));
    text.push_str(BENCH_CSV_HEADER);
    text.push('\n');
    for row in &rows {
        text.push_str(row);
        text.push('\n');
    }
    write_text(&out_path, &text)
}

/// Sibling path: `runs/conc.csv` -> `runs/conc.<tag>.csv`.
fn derived_path(base: &Path, tag: &str) -> PathBuf {
    base.with_extension(format!("{tag}.csv"))
}

/// Run the spectral-norm trial grid (and optional rare-event estimate) and
/// write the samples plus derived summary/fit CSVs.
pub fn cmd_conc_lab(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    parallel: Option<usize>,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_file(config_path)?;
    let master = config.master_seed(seed)?;
    let out_path = config.output_path(out)?;
    let conc = config.conc()?.clone();
    let grid = config.trial_grid(master)?;

    let outcome = with_pool(parallel, move || spectral_norm_trials(&grid))??;

    let mut trials = String::new();
    let _ = writeln!(trials, "{TRIALS_CSV_HEADER}");
    for record in &outcome.records {
        let _ = writeln!(trials, "{}", record.csv_row());
    }
    write_text(&out_path, &trials)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "{SUMMARY_CSV_HEADER}");
    for cell in &outcome.table {
        let _ = writeln!(summary, "{}", cell.csv_row());
    }
    write_text(&derived_path(&out_path, "summary"), &summary)?;

    let fit = fit_scaling(&outcome.table, 0);
    let mut fits = String::new();
    let _ = writeln!(fits, "{FIT_CSV_HEADER}");
    for row in fit.csv_rows() {
        let _ = writeln!(fits, "{row}");
    }
    write_text(&derived_path(&out_path, "fit"), &fits)?;

    if let Some(event) = &conc.event {
        let rate = lower_bound_event_rate(
            event.d,
            event.m,
            event.trials,
            derive_seed(master, &[SEED_EVENT]),
        )?;
        let mut text = String::new();
        let _ = writeln!(text, "{EVENT_CSV_HEADER}");
        let _ = writeln!(text, "{}", rate.csv_row());
        write_text(&derived_path(&out_path, "event"), &text)?;
    }
    Ok(())
}

/// Serve as the learner: accept `model.m` workers, train, optionally write
/// the metrics CSV.
pub fn cmd_serve(
    config_path: &Path,
    bind_addr: &str,
    out: Option<&Path>,
    seed: Option<u64>,
    timeout_ms: u64,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_file(config_path)?;
    let master = config.master_seed(seed)?;
    let model = config.model()?.clone();
    let rounds = config.rounds()?;

    // The learner regenerates the dataset only to resolve eta = auto and to
    // score rounds against the true parameter; gradients still come off the
    // wire.
    let data = build_dataset(&model, master);
    let eta = resolve_eta(&config, &data)?;
    let train_config = TrainConfig {
        eta,
        rounds,
        aggregator: config.aggregator(master)?,
        radius: config.train.radius,
        theta_star: Some(data.theta_star.clone()),
    };
    // Bind before accepting and announce the resolved address, so callers
    // binding port 0 can learn where to point workers.
    let (listener, local) = bind(bind_addr)?;
    println!("listening on {local}");
    std::io::stdout().flush().ok();
    let mut server = LearnerServer::accept(listener, model.m, model.d, timeout_ms)?;
    let result = train(&mut server, &train_config)?;
    server.finish(train_config.rounds as u32, &result.theta);

    let final_error = result.metrics.last().map_or(f64::NAN, |r| r.error);
    eprintln!(
        "served {} rounds over {} workers; final error {final_error}",
        result.metrics.len(),
        model.m
    );
    match config.output_path(out) {
        Ok(path) => write_text(&path, &metrics_csv(&config.experiment, &result.metrics)),
        Err(_) => Ok(()),
    }
}

/// Join a learner as one worker, serving shard gradients until DONE.
pub fn cmd_worker(
    config_path: &Path,
    connect_addr: &str,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_file(config_path)?;
    let master = config.master_seed(seed)?;
    let model = config.model()?.clone();
    if matches!(config.fault.attack, AttackConfig::StealthShift { .. }) {
        return Err(CliError::Invalid(
            "fault.attack = stealth_shift needs omniscient collusion and only runs in \
             simulation; pick a local attack for worker mode"
                .into(),
        ));
    }
    let setup = WorkerSetup {
        data: build_dataset(&model, master),
        m: model.m,
        attack: config.attack_spec(),
        schedule: config.schedule(master),
        attack_stream: pool_stream(master),
    };
    let run = run_worker(connect_addr, &setup)?;
    eprintln!("worker {} served {} rounds", run.worker, run.rounds);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_star_depends_only_on_its_seed() {
        let a = ModelBlock {
            d: 4,
            n_total: 8,
            m: 2,
            noise: 0.0,
            theta_seed: 9,
        };
        let mut b = a.clone();
        b.n_total = 80;
        b.m = 40;
        assert_eq!(theta_star(&a), theta_star(&b));
        b.theta_seed = 10;
        assert_ne!(theta_star(&a), theta_star(&b));
    }

    #[test]
    fn datasets_are_reproducible_and_seed_sensitive() {
        let model = ModelBlock {
            d: 3,
            n_total: 12,
            m: 4,
            noise: 0.5,
            theta_seed: 1,
        };
        let a = build_dataset(&model, 7);
        let b = build_dataset(&model, 7);
        let c = build_dataset(&model, 8);
        assert_eq!(a.responses, b.responses);
        assert_ne!(a.responses, c.responses);
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::from(ConfigError::Missing("seed")).exit_code(), 2);
        assert_eq!(CliError::Invalid("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::from(TransportError::ConnectionLost).exit_code(),
            3
        );
        let io = std::io::Error::other("disk");
        assert_eq!(
            CliError::Write {
                path: PathBuf::from("x"),
                source: io
            }
            .exit_code(),
            1
        );
    }
}
