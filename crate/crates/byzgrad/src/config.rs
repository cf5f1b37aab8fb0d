//! Experiment configuration: a flat, line-oriented `key = value` format with
//! dotted section prefixes (`model.d = 20`), chosen over nested formats so
//! experiment files diff line-by-line.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are grouped by
//! prefix: `model.*` (problem instance), `fault.*` (adversary), `agg.*`
//! (aggregation rule), `train.*` (descent loop), `bench.*` (sweep grids),
//! `conc.*` (spectral-norm trial grids), plus the top-level `experiment`,
//! `seed`, and `output`. Unknown keys, duplicate keys, and values that fail
//! cross-field checks are all reported with the line they came from.

use crate::byzantine::{AttackSpec, FaultSchedule, ScheduleMode};
use crate::conclab::{EntryDist, TrialGrid};
use crate::filter::{FilterConfig, Termination};
use crate::learning::Aggregator;
use crate::numerics::derive_seed;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Stream labels hung off the master seed. Everything an experiment draws is
/// derived from `(master seed, label)`, so simulation, the networked learner,
/// and remote workers agree on every byte without sharing rng state, and
/// sweep cells never perturb each other.
pub const SEED_DATA: u64 = 1;
pub const SEED_POOL: u64 = 2;
pub const SEED_FILTER: u64 = 3;
pub const SEED_SCHEDULE: u64 = 4;
pub const SEED_CELL: u64 = 5;
pub const SEED_EVENT: u64 = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line {
        line,
        message: message.into(),
    }
}

/// Problem instance: a linear-regression dataset split evenly across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    /// `model.d` — parameter dimension.
    pub d: usize,
    /// `model.n` — total number of data points, split evenly across workers.
    pub n_total: usize,
    /// `model.m` — number of workers.
    pub m: usize,
    /// `model.noise` — response noise standard deviation (default 0).
    pub noise: f64,
    /// `model.theta_seed` — seed for the true parameter vector, kept separate
    /// from the master seed so sweeps share a target (default 0).
    pub theta_seed: u64,
}

/// `fault.attack` plus its parameter keys.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackConfig {
    None,
    GaussianNoise { scale: f64 },
    SignFlip { scale: f64 },
    Constant { vector: Vec<f64> },
    StealthShift { delta: f64 },
}

impl AttackConfig {
    fn name(&self) -> &'static str {
        match self {
            AttackConfig::None => "none",
            AttackConfig::GaussianNoise { .. } => "gaussian_noise",
            AttackConfig::SignFlip { .. } => "sign_flip",
            AttackConfig::Constant { .. } => "constant",
            AttackConfig::StealthShift { .. } => "stealth_shift",
        }
    }
}

/// `fault.schedule` plus its parameter keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleConfig {
    /// `fault.ids` — the same workers are faulty every round.
    Fixed { ids: Vec<u32> },
    /// Fault set resampled each round; `fault.schedule_seed` overrides the
    /// seed otherwise derived from the master seed.
    Mobile { seed: Option<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultBlock {
    /// `fault.q` — fault budget per round.
    pub q: usize,
    pub attack: AttackConfig,
    pub schedule: ScheduleConfig,
}

impl Default for FaultBlock {
    fn default() -> Self {
        FaultBlock {
            q: 0,
            attack: AttackConfig::None,
            schedule: ScheduleConfig::Mobile { seed: None },
        }
    }
}

/// Aggregation rule names accepted by `agg.method` and `bench.aggregators`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    Mean,
    CoordMedian,
    TrimmedMean,
    GeoMedianOfMeans,
    IterFilter,
}

impl MethodName {
    pub const ALL: [MethodName; 5] = [
        MethodName::Mean,
        MethodName::CoordMedian,
        MethodName::TrimmedMean,
        MethodName::GeoMedianOfMeans,
        MethodName::IterFilter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Mean => "mean",
            MethodName::CoordMedian => "coord_median",
            MethodName::TrimmedMean => "trimmed_mean",
            MethodName::GeoMedianOfMeans => "geomedian_of_means",
            MethodName::IterFilter => "iter_filter",
        }
    }

    fn parse(raw: &str) -> Option<MethodName> {
        Self::ALL.into_iter().find(|m| m.as_str() == raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggBlock {
    pub method: MethodName,
    /// `agg.beta` — per-side trim fraction (trimmed_mean only).
    pub beta: Option<f64>,
    /// `agg.groups` — group count (geomedian_of_means only).
    pub groups: Option<usize>,
    /// `agg.epsilon` — assumed corruption fraction (iter_filter only);
    /// defaults to `q / m`.
    pub epsilon: Option<f64>,
    /// `agg.sigma` — inlier scale; its presence switches the filter from the
    /// cardinality rule to the sigma-threshold rule (iter_filter only).
    pub sigma: Option<f64>,
}

impl Default for AggBlock {
    fn default() -> Self {
        AggBlock {
            method: MethodName::Mean,
            beta: None,
            groups: None,
            epsilon: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainBlock {
    /// `train.eta` — step size; `auto` (the default) uses the covariate
    /// spectrum rule.
    pub eta: Option<f64>,
    /// `train.rounds` — descent rounds T.
    pub rounds: Option<usize>,
    /// `train.radius` — optional projection-ball radius around the origin.
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchBlock {
    /// `bench.aggregators` — comma list of method names.
    pub aggregators: Vec<MethodName>,
    /// `bench.q` — fault budgets to sweep.
    pub q_values: Vec<usize>,
    /// `bench.seeds` — repetitions per (aggregator, q) cell (default 1).
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventBlock {
    pub d: usize,
    pub m: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcBlock {
    pub dims: Vec<usize>,
    pub widths: Vec<usize>,
    pub dist: EntryDist,
    pub trials: usize,
    /// `conc.event_d` / `conc.event_m` / `conc.event_trials` — optional
    /// lower-bound event estimate alongside the norm grid.
    pub event: Option<EventBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `experiment` — id stamped into every metrics row (default
    /// "experiment"; must not contain commas).
    pub experiment: String,
    /// `seed` — master seed; the `--seed` flag overrides it.
    pub seed: Option<u64>,
    /// `output` — CSV path; the `--out` flag overrides it.
    pub output: Option<String>,
    pub model: Option<ModelBlock>,
    pub fault: FaultBlock,
    pub agg: AggBlock,
    pub train: TrainBlock,
    pub bench: Option<BenchBlock>,
    pub conc: Option<ConcBlock>,
}

const KEYS: &[&str] = &[
    "experiment",
    "seed",
    "output",
    "model.d",
    "model.n",
    "model.m",
    "model.noise",
    "model.theta_seed",
    "fault.q",
    "fault.attack",
    "fault.scale",
    "fault.vector",
    "fault.delta",
    "fault.schedule",
    "fault.ids",
    "fault.schedule_seed",
    "agg.method",
    "agg.beta",
    "agg.groups",
    "agg.epsilon",
    "agg.sigma",
    "train.eta",
    "train.rounds",
    "train.radius",
    "bench.aggregators",
    "bench.q",
    "bench.seeds",
    "conc.dims",
    "conc.widths",
    "conc.dist",
    "conc.trials",
    "conc.event_d",
    "conc.event_m",
    "conc.event_trials",
];

/// Raw `key -> (line, value)` table with strict unknown/duplicate handling.
struct Raw {
    entries: HashMap<&'static str, (usize, String)>,
}

impl Raw {
    fn scan(text: &str) -> Result<Raw, ConfigError> {
        let mut entries: HashMap<&'static str, (usize, String)> = HashMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw_line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((lhs, rhs)) = trimmed.split_once('=') else {
                return Err(at(line, format!("expected 'key = value', got '{trimmed}'")));
            };
            let key = lhs.trim();
            let value = rhs.trim();
            let Some(canonical) = KEYS.iter().find(|k| **k == key) else {
                return Err(at(line, format!("unknown key '{key}'")));
            };
            if value.is_empty() {
                return Err(at(line, format!("{key}: empty value")));
            }
            if let Some((first, _)) = entries.get(canonical) {
                return Err(at(
                    line,
                    format!("duplicate key '{key}' (first set on line {first})"),
                ));
            }
            entries.insert(canonical, (line, value.to_string()));
        }
        Ok(Raw { entries })
    }

    fn take(&mut self, key: &'static str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }
}

fn scalar<T: FromStr>(line: usize, key: &str, raw: &str, what: &str) -> Result<T, ConfigError> {
    raw.parse::<T>()
        .map_err(|_| at(line, format!("{key}: expected {what}, got '{raw}'")))
}

fn finite(line: usize, key: &str, raw: &str) -> Result<f64, ConfigError> {
    let value: f64 = scalar(line, key, raw, "a number")?;
    if !value.is_finite() {
        return Err(at(line, format!("{key}: must be finite, got '{raw}'")));
    }
    Ok(value)
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str, what: &str) -> Result<Vec<T>, ConfigError> {
    raw.split(',')
        .map(|item| scalar(line, key, item.trim(), what))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::scan(text)?;

        let experiment = match raw.take("experiment") {
            Some((line, value)) => {
                if value.contains(',') {
                    return Err(at(line, "experiment: id must not contain commas"));
                }
                value
            }
            None => "experiment".to_string(),
        };
        let seed = match raw.take("seed") {
            Some((line, value)) => Some(scalar(line, "seed", &value, "an unsigned integer")?),
            None => None,
        };
        let output = raw.take("output").map(|(_, value)| value);

        let model = parse_model(&mut raw)?;
        let (fault, q_line) = parse_fault(&mut raw, model.as_ref())?;
        let agg = parse_agg(&mut raw, model.as_ref(), &fault, q_line)?;
        let train = parse_train(&mut raw)?;
        let bench = parse_bench(&mut raw, model.as_ref(), &agg)?;
        let conc = parse_conc(&mut raw)?;

        debug_assert!(raw.entries.is_empty(), "all known keys consumed");
        Ok(ExperimentConfig {
            experiment,
            seed,
            output,
            model,
            fault,
            agg,
            train,
            bench,
            conc,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Canonical text form. `parse(to_text(parse(x)))` equals `parse(x)`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        push("experiment", self.experiment.clone());
        if let Some(seed) = self.seed {
            push("seed", seed.to_string());
        }
        if let Some(output) = &self.output {
            push("output", output.clone());
        }
        if let Some(model) = &self.model {
            push("model.d", model.d.to_string());
            push("model.n", model.n_total.to_string());
            push("model.m", model.m.to_string());
            push("model.noise", model.noise.to_string());
            push("model.theta_seed", model.theta_seed.to_string());
        }
        push("fault.q", self.fault.q.to_string());
        push("fault.attack", self.fault.attack.name().to_string());
        match &self.fault.attack {
            AttackConfig::None => {}
            AttackConfig::GaussianNoise { scale } | AttackConfig::SignFlip { scale } => {
                push("fault.scale", scale.to_string());
            }
            AttackConfig::Constant { vector } => push("fault.vector", join(vector)),
            AttackConfig::StealthShift { delta } => push("fault.delta", delta.to_string()),
        }
        match &self.fault.schedule {
            ScheduleConfig::Fixed { ids } => {
                push("fault.schedule", "fixed".to_string());
                push("fault.ids", join(ids));
            }
            ScheduleConfig::Mobile { seed } => {
                push("fault.schedule", "mobile".to_string());
                if let Some(seed) = seed {
                    push("fault.schedule_seed", seed.to_string());
                }
            }
        }
        push("agg.method", self.agg.method.as_str().to_string());
        if let Some(beta) = self.agg.beta {
            push("agg.beta", beta.to_string());
        }
        if let Some(groups) = self.agg.groups {
            push("agg.groups", groups.to_string());
        }
        if let Some(epsilon) = self.agg.epsilon {
            push("agg.epsilon", epsilon.to_string());
        }
        if let Some(sigma) = self.agg.sigma {
            push("agg.sigma", sigma.to_string());
        }
        match self.train.eta {
            Some(eta) => push("train.eta", eta.to_string()),
            None => push("train.eta", "auto".to_string()),
        }
        if let Some(rounds) = self.train.rounds {
            push("train.rounds", rounds.to_string());
        }
        if let Some(radius) = self.train.radius {
            push("train.radius", radius.to_string());
        }
        if let Some(bench) = &self.bench {
            push(
                "bench.aggregators",
                bench
                    .aggregators
                    .iter()
                    .map(|m| m.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            push("bench.q", join(&bench.q_values));
            push("bench.seeds", bench.seeds.to_string());
        }
        if let Some(conc) = &self.conc {
            push("conc.dims", join(&conc.dims));
            push("conc.widths", join(&conc.widths));
            push("conc.dist", conc.dist.as_str().to_string());
            push("conc.trials", conc.trials.to_string());
            if let Some(event) = &conc.event {
                push("conc.event_d", event.d.to_string());
                push("conc.event_m", event.m.to_string());
                push("conc.event_trials", event.trials.to_string());
            }
        }
        out
    }

    /// Master seed: the CLI flag wins over the config key.
    pub fn master_seed(&self, flag: Option<u64>) -> Result<u64, ConfigError> {
        flag.or(self.seed).ok_or(ConfigError::Missing("seed"))
    }

    /// Output path: the CLI flag wins over the config key.
    pub fn output_path(&self, flag: Option<&Path>) -> Result<std::path::PathBuf, ConfigError> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.as_ref().map(std::path::PathBuf::from))
            .ok_or(ConfigError::Missing("output"))
    }

    pub fn model(&self) -> Result<&ModelBlock, ConfigError> {
        self.model.as_ref().ok_or(ConfigError::Missing("model.d"))
    }

    pub fn rounds(&self) -> Result<usize, ConfigError> {
        self.train.rounds.ok_or(ConfigError::Missing("train.rounds"))
    }

    pub fn bench(&self) -> Result<&BenchBlock, ConfigError> {
        self.bench
            .as_ref()
            .ok_or(ConfigError::Missing("bench.aggregators"))
    }

    pub fn conc(&self) -> Result<&ConcBlock, ConfigError> {
        self.conc.as_ref().ok_or(ConfigError::Missing("conc.dims"))
    }

    pub fn attack_spec(&self) -> AttackSpec {
        match &self.fault.attack {
            AttackConfig::None => AttackSpec::None,
            AttackConfig::GaussianNoise { scale } => AttackSpec::GaussianNoise { scale: *scale },
            AttackConfig::SignFlip { scale } => AttackSpec::SignFlip { scale: *scale },
            AttackConfig::Constant { vector } => AttackSpec::Constant {
                vector: vector.clone(),
            },
            AttackConfig::StealthShift { delta } => AttackSpec::StealthShift { delta: *delta },
        }
    }

    /// Fault schedule with the stated budget; bench sweeps override `q`.
    pub fn schedule_with_q(&self, q: usize, master: u64) -> FaultSchedule {
        let mode = match &self.fault.schedule {
            ScheduleConfig::Fixed { ids } => ScheduleMode::Fixed(ids.clone()),
            ScheduleConfig::Mobile { seed } => ScheduleMode::MobileResample {
                seed: seed.unwrap_or_else(|| derive_seed(master, &[SEED_SCHEDULE])),
            },
        };
        FaultSchedule { q, mode }
    }

    pub fn schedule(&self, master: u64) -> FaultSchedule {
        self.schedule_with_q(self.fault.q, master)
    }

    /// Build an aggregator; `q` feeds the default filter epsilon `q / m`.
    pub fn aggregator_for(
        &self,
        method: MethodName,
        q: usize,
        master: u64,
    ) -> Result<Aggregator, ConfigError> {
        Ok(match method {
            MethodName::Mean => Aggregator::Mean,
            MethodName::CoordMedian => Aggregator::CoordMedian,
            MethodName::TrimmedMean => Aggregator::TrimmedMean {
                beta: self.agg.beta.ok_or(ConfigError::Missing("agg.beta"))?,
            },
            MethodName::GeoMedianOfMeans => Aggregator::GeoMedianOfMeans {
                groups: self.agg.groups.ok_or(ConfigError::Missing("agg.groups"))?,
            },
            MethodName::IterFilter => {
                let m = self.model()?.m;
                let epsilon = self.agg.epsilon.unwrap_or(q as f64 / m as f64);
                let termination = if self.agg.sigma.is_some() {
                    Termination::SigmaThreshold
                } else {
                    Termination::Cardinality
                };
                Aggregator::IterFilter(FilterConfig {
                    epsilon,
                    sigma: self.agg.sigma,
                    termination,
                    seed: derive_seed(master, &[SEED_FILTER]),
                    ..FilterConfig::default()
                })
            }
        })
    }

    pub fn aggregator(&self, master: u64) -> Result<Aggregator, ConfigError> {
        self.aggregator_for(self.agg.method, self.fault.q, master)
    }

    pub fn trial_grid(&self, master: u64) -> Result<TrialGrid, ConfigError> {
        let conc = self.conc()?;
        Ok(TrialGrid {
            dims: conc.dims.clone(),
            widths: conc.widths.clone(),
            dist: conc.dist,
            trials: conc.trials,
            seed: master,
        })
    }
}

fn parse_model(raw: &mut Raw) -> Result<Option<ModelBlock>, ConfigError> {
    if !raw.has_prefix("model.") {
        return Ok(None);
    }
    let (d_line, d_raw) = raw.take("model.d").ok_or(ConfigError::Missing("model.d"))?;
    let d: usize = scalar(d_line, "model.d", &d_raw, "an unsigned integer")?;
    if d == 0 {
        return Err(at(d_line, "model.d: must be at least 1"));
    }
    let (n_line, n_raw) = raw.take("model.n").ok_or(ConfigError::Missing("model.n"))?;
    let n_total: usize = scalar(n_line, "model.n", &n_raw, "an unsigned integer")?;
    let (m_line, m_raw) = raw.take("model.m").ok_or(ConfigError::Missing("model.m"))?;
    let m: usize = scalar(m_line, "model.m", &m_raw, "an unsigned integer")?;
    if m == 0 {
        return Err(at(m_line, "model.m: must be at least 1"));
    }
    if n_total == 0 || n_total % m != 0 {
        return Err(at(
            n_line,
            format!("model.n: N = {n_total} must be a positive multiple of model.m = {m}"),
        ));
    }
    let noise = match raw.take("model.noise") {
        Some((line, value)) => {
            let noise = finite(line, "model.noise", &value)?;
            if noise < 0.0 {
                return Err(at(line, "model.noise: must be nonnegative"));
            }
            noise
        }
        None => 0.0,
    };
    let theta_seed = match raw.take("model.theta_seed") {
        Some((line, value)) => scalar(line, "model.theta_seed", &value, "an unsigned integer")?,
        None => 0,
    };
    Ok(Some(ModelBlock {
        d,
        n_total,
        m,
        noise,
        theta_seed,
    }))
}

/// Returns the block plus the line `fault.q` appeared on (for later
/// cross-field diagnostics).
fn parse_fault(
    raw: &mut Raw,
    model: Option<&ModelBlock>,
) -> Result<(FaultBlock, Option<usize>), ConfigError> {
    let attack_entry = raw.take("fault.attack");
    let scale_entry = raw.take("fault.scale");
    let vector_entry = raw.take("fault.vector");
    let delta_entry = raw.take("fault.delta");
    let attack_name = match &attack_entry {
        Some((line, value)) => (*line, value.as_str()),
        None => (0, "none"),
    };
    let reject_param =
        |entry: &Option<(usize, String)>, key: &str, wanted: &str| -> Result<(), ConfigError> {
            match entry {
                Some((line, _)) => Err(at(
                    *line,
                    format!("{key}: only applies to fault.attack = {wanted}"),
                )),
                None => Ok(()),
            }
        };
    let attack = match attack_name.1 {
        "none" => {
            reject_param(&scale_entry, "fault.scale", "sign_flip or gaussian_noise")?;
            reject_param(&vector_entry, "fault.vector", "constant")?;
            reject_param(&delta_entry, "fault.delta", "stealth_shift")?;
            AttackConfig::None
        }
        kind @ ("sign_flip" | "gaussian_noise") => {
            reject_param(&vector_entry, "fault.vector", "constant")?;
            reject_param(&delta_entry, "fault.delta", "stealth_shift")?;
            let scale = match &scale_entry {
                Some((line, value)) => {
                    let scale = finite(*line, "fault.scale", value)?;
                    if scale <= 0.0 {
                        return Err(at(*line, "fault.scale: must be positive"));
                    }
                    scale
                }
                None => 1.0,
            };
            if kind == "sign_flip" {
                AttackConfig::SignFlip { scale }
            } else {
                AttackConfig::GaussianNoise { scale }
            }
        }
        "constant" => {
            reject_param(&scale_entry, "fault.scale", "sign_flip or gaussian_noise")?;
            reject_param(&delta_entry, "fault.delta", "stealth_shift")?;
            let (line, value) = vector_entry.ok_or(ConfigError::Missing("fault.vector"))?;
            let vector: Vec<f64> = list(line, "fault.vector", &value, "a number")?;
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(at(line, "fault.vector: entries must be finite"));
            }
            if let Some(model) = model {
                if vector.len() != model.d {
                    return Err(at(
                        line,
                        format!(
                            "fault.vector: {} entries but model.d = {}",
                            vector.len(),
                            model.d
                        ),
                    ));
                }
            }
            AttackConfig::Constant { vector }
        }
        "stealth_shift" => {
            reject_param(&scale_entry, "fault.scale", "sign_flip or gaussian_noise")?;
            reject_param(&vector_entry, "fault.vector", "constant")?;
            let (line, value) = delta_entry.ok_or(ConfigError::Missing("fault.delta"))?;
            let delta = finite(line, "fault.delta", &value)?;
            if delta <= 0.0 {
                return Err(at(line, "fault.delta: must be positive"));
            }
            AttackConfig::StealthShift { delta }
        }
        other => {
            return Err(at(
                attack_name.0,
                format!(
                    "fault.attack: unknown attack '{other}' \
                     (expected none, gaussian_noise, sign_flip, constant, or stealth_shift)"
                ),
            ));
        }
    };

    let schedule_entry = raw.take("fault.schedule");
    let ids_entry = raw.take("fault.ids");
    let seed_entry = raw.take("fault.schedule_seed");
    let q_entry = raw.take("fault.q");
    let schedule_name = match &schedule_entry {
        Some((line, value)) => (*line, value.as_str()),
        None => (0, "mobile"),
    };
    let (q, schedule) = match schedule_name.1 {
        "fixed" => {
            if let Some((line, _)) = seed_entry {
                return Err(at(
                    line,
                    "fault.schedule_seed: only applies to fault.schedule = mobile",
                ));
            }
            let (line, value) = ids_entry.ok_or(ConfigError::Missing("fault.ids"))?;
            let ids: Vec<u32> = list(line, "fault.ids", &value, "a worker id")?;
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(at(line, "fault.ids: duplicate worker id"));
            }
            if let Some(model) = model {
                if let Some(&worst) = sorted.last() {
                    if worst as usize >= model.m {
                        return Err(at(
                            line,
                            format!("fault.ids: id {worst} out of range for model.m = {}", model.m),
                        ));
                    }
                }
            }
            let q = match &q_entry {
                Some((q_line, q_raw)) => {
                    let q: usize = scalar(*q_line, "fault.q", q_raw, "an unsigned integer")?;
                    if q != ids.len() {
                        return Err(at(
                            *q_line,
                            format!("fault.q: q = {q} disagrees with the {} ids in fault.ids", ids.len()),
                        ));
                    }
                    q
                }
                None => ids.len(),
            };
            (q, ScheduleConfig::Fixed { ids })
        }
        "mobile" => {
            if let Some((line, _)) = ids_entry {
                return Err(at(line, "fault.ids: only applies to fault.schedule = fixed"));
            }
            let seed = match seed_entry {
                Some((line, value)) => Some(scalar(
                    line,
                    "fault.schedule_seed",
                    &value,
                    "an unsigned integer",
                )?),
                None => None,
            };
            let q = match &q_entry {
                Some((line, value)) => scalar(*line, "fault.q", value, "an unsigned integer")?,
                None => 0,
            };
            (q, ScheduleConfig::Mobile { seed })
        }
        other => {
            return Err(at(
                schedule_name.0,
                format!("fault.schedule: unknown schedule '{other}' (expected fixed or mobile)"),
            ));
        }
    };
    let q_line = q_entry.map(|(line, _)| line);
    if let Some(model) = model {
        if q > model.m {
            return Err(at(
                q_line.unwrap_or(schedule_name.0),
                format!("fault.q: q = {q} exceeds the worker count model.m = {}", model.m),
            ));
        }
    }
    Ok((FaultBlock { q, attack, schedule }, q_line))
}

fn parse_agg(
    raw: &mut Raw,
    model: Option<&ModelBlock>,
    fault: &FaultBlock,
    q_line: Option<usize>,
) -> Result<AggBlock, ConfigError> {
    let method_entry = raw.take("agg.method");
    let beta_entry = raw.take("agg.beta");
    let groups_entry = raw.take("agg.groups");
    let epsilon_entry = raw.take("agg.epsilon");
    let sigma_entry = raw.take("agg.sigma");
    let method = match &method_entry {
        Some((line, value)) => MethodName::parse(value).ok_or_else(|| {
            at(
                *line,
                format!(
                    "agg.method: unknown method '{value}' (expected mean, coord_median, \
                     trimmed_mean, geomedian_of_means, or iter_filter)"
                ),
            )
        })?,
        None => MethodName::Mean,
    };

    // A parameter key for a method that is neither selected nor swept is a
    // mistake worth flagging; bench sweeps legitimately need params for
    // methods other than agg.method.
    let swept = |m: MethodName| method == m || raw_bench_mentions(raw, m);
    let beta = match beta_entry {
        Some((line, value)) => {
            if !swept(MethodName::TrimmedMean) {
                return Err(at(line, "agg.beta: only applies to trimmed_mean"));
            }
            let beta = finite(line, "agg.beta", &value)?;
            if !(0.0..0.5).contains(&beta) {
                return Err(at(line, "agg.beta: trim fraction must lie in [0, 0.5)"));
            }
            Some(beta)
        }
        None => None,
    };
    let groups = match groups_entry {
        Some((line, value)) => {
            if !swept(MethodName::GeoMedianOfMeans) {
                return Err(at(line, "agg.groups: only applies to geomedian_of_means"));
            }
            let groups: usize = scalar(line, "agg.groups", &value, "an unsigned integer")?;
            if groups == 0 {
                return Err(at(line, "agg.groups: must be at least 1"));
            }
            if let Some(model) = model {
                if groups > model.m {
                    return Err(at(
                        line,
                        format!(
                            "agg.groups: {groups} groups exceed the worker count model.m = {}",
                            model.m
                        ),
                    ));
                }
            }
            Some(groups)
        }
        None => None,
    };
    let epsilon = match epsilon_entry {
        Some((line, value)) => {
            if !swept(MethodName::IterFilter) {
                return Err(at(line, "agg.epsilon: only applies to iter_filter"));
            }
            let epsilon = finite(line, "agg.epsilon", &value)?;
            if !(0.0..0.25).contains(&epsilon) {
                return Err(at(
                    line,
                    format!("agg.epsilon: epsilon = {epsilon} is outside the filter domain [0, 1/4)"),
                ));
            }
            Some(epsilon)
        }
        None => None,
    };
    let sigma = match sigma_entry {
        Some((line, value)) => {
            if !swept(MethodName::IterFilter) {
                return Err(at(line, "agg.sigma: only applies to iter_filter"));
            }
            let sigma = finite(line, "agg.sigma", &value)?;
            if sigma <= 0.0 {
                return Err(at(line, "agg.sigma: must be positive"));
            }
            Some(sigma)
        }
        None => None,
    };

    // The filter's default epsilon is the true corruption fraction q/m, which
    // must then satisfy the filter's own domain bound.
    if method == MethodName::IterFilter && epsilon.is_none() {
        if let Some(model) = model {
            let implied = fault.q as f64 / model.m as f64;
            if implied >= 0.25 {
                return Err(at(
                    q_line.unwrap_or(0),
                    format!(
                        "fault.q: implied corruption fraction epsilon = q/m = {implied} \
                         is outside the filter domain [0, 1/4); \
                         lower fault.q or set agg.epsilon explicitly"
                    ),
                ));
            }
        }
    }
    Ok(AggBlock {
        method,
        beta,
        groups,
        epsilon,
        sigma,
    })
}

/// Whether the (not yet consumed) bench block sweeps the given method.
fn raw_bench_mentions(raw: &Raw, method: MethodName) -> bool {
    raw.entries
        .get("bench.aggregators")
        .is_some_and(|(_, value)| {
            value
                .split(',')
                .any(|item| item.trim() == method.as_str())
        })
}

fn parse_train(raw: &mut Raw) -> Result<TrainBlock, ConfigError> {
    let eta = match raw.take("train.eta") {
        Some((_, value)) if value == "auto" => None,
        Some((line, value)) => {
            let eta = finite(line, "train.eta", &value)?;
            if eta <= 0.0 {
                return Err(at(line, "train.eta: must be positive (or 'auto')"));
            }
            Some(eta)
        }
        None => None,
    };
    let rounds = match raw.take("train.rounds") {
        Some((line, value)) => {
            let rounds: usize = scalar(line, "train.rounds", &value, "an unsigned integer")?;
            if rounds == 0 {
                return Err(at(line, "train.rounds: must be at least 1"));
            }
            Some(rounds)
        }
        None => None,
    };
    let radius = match raw.take("train.radius") {
        Some((line, value)) => {
            let radius = finite(line, "train.radius", &value)?;
            if radius <= 0.0 {
                return Err(at(line, "train.radius: must be positive"));
            }
            Some(radius)
        }
        None => None,
    };
    Ok(TrainBlock { eta, rounds, radius })
}

fn parse_bench(
    raw: &mut Raw,
    model: Option<&ModelBlock>,
    agg: &AggBlock,
) -> Result<Option<BenchBlock>, ConfigError> {
    if !raw.has_prefix("bench.") {
        return Ok(None);
    }
    let (agg_line, agg_raw) = raw
        .take("bench.aggregators")
        .ok_or(ConfigError::Missing("bench.aggregators"))?;
    let mut aggregators = Vec::new();
    for item in agg_raw.split(',') {
        let name = item.trim();
        let method = MethodName::parse(name)
            .ok_or_else(|| at(agg_line, format!("bench.aggregators: unknown method '{name}'")))?;
        if aggregators.contains(&method) {
            return Err(at(
                agg_line,
                format!("bench.aggregators: duplicate method '{name}'"),
            ));
        }
        aggregators.push(method);
    }
    if aggregators.contains(&MethodName::TrimmedMean) && agg.beta.is_none() {
        return Err(ConfigError::Missing("agg.beta"));
    }
    if aggregators.contains(&MethodName::GeoMedianOfMeans) && agg.groups.is_none() {
        return Err(ConfigError::Missing("agg.groups"));
    }
    let (q_line, q_raw) = raw.take("bench.q").ok_or(ConfigError::Missing("bench.q"))?;
    let q_values: Vec<usize> = list(q_line, "bench.q", &q_raw, "an unsigned integer")?;
    if q_values.is_empty() {
        return Err(at(q_line, "bench.q: needs at least one value"));
    }
    if let Some(model) = model {
        for &q in &q_values {
            if q > model.m {
                return Err(at(
                    q_line,
                    format!("bench.q: q = {q} exceeds the worker count model.m = {}", model.m),
                ));
            }
            if aggregators.contains(&MethodName::IterFilter) && agg.epsilon.is_none() {
                let implied = q as f64 / model.m as f64;
                if implied >= 0.25 {
                    return Err(at(
                        q_line,
                        format!(
                            "bench.q: q = {q} implies epsilon = q/m = {implied}, \
                             outside the filter domain [0, 1/4)"
                        ),
                    ));
                }
            }
        }
    }
    let seeds = match raw.take("bench.seeds") {
        Some((line, value)) => {
            let seeds: usize = scalar(line, "bench.seeds", &value, "an unsigned integer")?;
            if seeds == 0 {
                return Err(at(line, "bench.seeds: must be at least 1"));
            }
            seeds
        }
        None => 1,
    };
    Ok(Some(BenchBlock {
        aggregators,
        q_values,
        seeds,
    }))
}

fn parse_conc(raw: &mut Raw) -> Result<Option<ConcBlock>, ConfigError> {
    if !raw.has_prefix("conc.") {
        return Ok(None);
    }
    let (dims_line, dims_raw) = raw
        .take("conc.dims")
        .ok_or(ConfigError::Missing("conc.dims"))?;
    let dims: Vec<usize> = list(dims_line, "conc.dims", &dims_raw, "an unsigned integer")?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(at(dims_line, "conc.dims: needs positive dimensions"));
    }
    let (widths_line, widths_raw) = raw
        .take("conc.widths")
        .ok_or(ConfigError::Missing("conc.widths"))?;
    let widths: Vec<usize> = list(widths_line, "conc.widths", &widths_raw, "an unsigned integer")?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(at(widths_line, "conc.widths: needs positive widths"));
    }
    let dist = match raw.take("conc.dist") {
        Some((line, value)) => match value.as_str() {
            "laplace" => EntryDist::Laplace,
            "gaussian" => EntryDist::Gaussian,
            other => {
                return Err(at(
                    line,
                    format!("conc.dist: unknown distribution '{other}' (expected laplace or gaussian)"),
                ));
            }
        },
        None => EntryDist::Laplace,
    };
    let trials = match raw.take("conc.trials") {
        Some((line, value)) => {
            let trials: usize = scalar(line, "conc.trials", &value, "an unsigned integer")?;
            if trials < 30 {
                return Err(at(
                    line,
                    "conc.trials: quantile summaries need at least 30 trials per cell",
                ));
            }
            trials
        }
        None => 100,
    };
    let event_d = raw.take("conc.event_d");
    let event_m = raw.take("conc.event_m");
    let event_trials = raw.take("conc.event_trials");
    let event = match event_d {
        Some((d_line, d_raw)) => {
            let d: usize = scalar(d_line, "conc.event_d", &d_raw, "an unsigned integer")?;
            if d == 0 {
                return Err(at(d_line, "conc.event_d: must be at least 1"));
            }
            let (m_line, m_raw) = event_m.ok_or(ConfigError::Missing("conc.event_m"))?;
            let m: usize = scalar(m_line, "conc.event_m", &m_raw, "an unsigned integer")?;
            if m == 0 {
                return Err(at(m_line, "conc.event_m: must be at least 1"));
            }
            let (t_line, t_raw) = event_trials.ok_or(ConfigError::Missing("conc.event_trials"))?;
            let trials: usize = scalar(t_line, "conc.event_trials", &t_raw, "an unsigned integer")?;
            let expected = (-(2.0f64).sqrt() * d as f64).exp() * trials as f64;
            if expected < 100.0 {
                return Err(at(
                    t_line,
                    format!(
                        "conc.event_trials: underpowered — expected hit count {expected:.1} < 100 \
                         at conc.event_d = {d}; raise the trial count"
                    ),
                ));
            }
            Some(EventBlock { d, m, trials })
        }
        None => {
            if let Some((line, _)) = event_m {
                return Err(at(line, "conc.event_m: requires conc.event_d"));
            }
            if let Some((line, _)) = event_trials {
                return Err(at(line, "conc.event_trials: requires conc.event_d"));
            }
            None
        }
    };
    Ok(Some(ConcBlock {
        dims,
        widths,
        dist,
        trials,
        event,
    }))
}
