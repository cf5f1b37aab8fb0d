//! Simulated Byzantine worker pool: fault schedules, attack transformations
//! of the report matrix, and an in-process [`ReportSource`] that drives the
//! training loop without any networking.
//!
//! The adversary model is omniscient and mobile: the attacked ids may change
//! every round, and an attack sees the round number, the broadcast parameter,
//! every honest gradient, and the learner's random stream. Attacks are pure
//! functions from the honest report matrix to the reported one — they never
//! touch worker state or the dataset, and non-faulty columns pass through
//! bit-identically.

use rayon::prelude::*;
use thiserror::Error;

use crate::learning::{
    local_gradient, make_shards, Dataset, GradientReport, LearnError, ReportSource, Shard,
};
use crate::numerics::{
    axpy, dot, norm2, sub, symmetric_eigen, DenseMatrix, RngStream, SymmetricMatrix,
};
use crate::numerics::sample::gaussian;

/// Errors from schedule or attack configuration.
#[derive(Debug, Error)]
pub enum ByzError {
    #[error("schedule allows {q} faults but there are only {m} workers")]
    BadSchedule { q: usize, m: usize },
    #[error("fixed fault set is invalid: {0}")]
    BadFixedIds(String),
    #[error("attack scale {0} must be nonnegative and finite")]
    BadScale(f64),
    #[error("constant attack vector has length {got}, reports have dimension {want}")]
    BadConstant { got: usize, want: usize },
    #[error("faulty id {id} out of range for {m} workers")]
    IdOutOfRange { id: u32, m: usize },
    #[error("stealth-shift requires collusion and cannot run on a lone worker")]
    NeedsCollusion,
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// What the faulty workers report in place of their honest gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    /// Faulty workers report honestly anyway.
    None,
    /// Report the honest gradient plus `scale * N(0, I)` noise.
    GaussianNoise { scale: f64 },
    /// Report `-scale` times the honest gradient.
    SignFlip { scale: f64 },
    /// Report a fixed vector, ignoring the data entirely.
    Constant { vector: Vec<f64> },
    /// Colluding mean-shift attack: the faulty workers jointly report one
    /// common vector chosen so the report average moves by `delta` along the
    /// top eigenvector of the honest-report covariance, while each reported
    /// vector stays within the honest points' empirical spread. The common
    /// vector is the colluders' own honest mean plus the scaled shift, which
    /// makes the mean displacement exact rather than approximate.
    StealthShift { delta: f64 },
}

impl AttackSpec {
    /// Check parameter domains; `d` is the report dimension.
    pub fn validate(&self, d: usize) -> Result<(), ByzError> {
        match self {
            AttackSpec::None => Ok(()),
            AttackSpec::GaussianNoise { scale } | AttackSpec::SignFlip { scale } => {
                if *scale >= 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    Err(ByzError::BadScale(*scale))
                }
            }
            AttackSpec::Constant { vector } => {
                if vector.len() == d {
                    Ok(())
                } else {
                    Err(ByzError::BadConstant {
                        got: vector.len(),
                        want: d,
                    })
                }
            }
            AttackSpec::StealthShift { delta } => {
                if *delta >= 0.0 && delta.is_finite() {
                    Ok(())
                } else {
                    Err(ByzError::BadScale(*delta))
                }
            }
        }
    }
}

/// Which workers are faulty, and how the set evolves over rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleMode {
    /// The same ids every round.
    Fixed(Vec<u32>),
    /// A fresh uniform q-subset each round, drawn from a stream keyed by
    /// `(seed, round)` so earlier rounds never depend on how many rounds run.
    MobileResample { seed: u64 },
}

/// Fault budget plus selection mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultSchedule {
    pub q: usize,
    pub mode: ScheduleMode,
}

impl FaultSchedule {
    /// No faults at all.
    pub fn none() -> Self {
        FaultSchedule {
            q: 0,
            mode: ScheduleMode::Fixed(Vec::new()),
        }
    }

    pub fn validate(&self, m: usize) -> Result<(), ByzError> {
        if self.q > m {
            return Err(ByzError::BadSchedule { q: self.q, m });
        }
        if let ScheduleMode::Fixed(ids) = &self.mode {
            if ids.len() > self.q {
                return Err(ByzError::BadFixedIds(format!(
                    "{} ids exceed the budget q = {}",
                    ids.len(),
                    self.q
                )));
            }
            let mut seen = vec![false; m];
            for &id in ids {
                if id as usize >= m {
                    return Err(ByzError::BadFixedIds(format!(
                        "id {id} out of range for {m} workers"
                    )));
                }
                if seen[id as usize] {
                    return Err(ByzError::BadFixedIds(format!("id {id} listed twice")));
                }
                seen[id as usize] = true;
            }
        }
        Ok(())
    }
}

/// The faulty ids for one round, sorted ascending. A pure function of the
/// schedule and the round number: fixed sets repeat verbatim, mobile sets
/// are a uniform q-subset of the `m` workers drawn from the schedule's own
/// seed keyed by round.
pub fn select_faulty(schedule: &FaultSchedule, m: usize, round: u64) -> Vec<u32> {
    match &schedule.mode {
        ScheduleMode::Fixed(ids) => {
            let mut out = ids.clone();
            out.sort_unstable();
            out
        }
        ScheduleMode::MobileResample { seed } => {
            let q = schedule.q.min(m);
            let mut rng = RngStream::new(*seed, 0).child(round).rng();
            let mut ids: Vec<u32> = (0..m as u32).collect();
            // Partial Fisher-Yates: the first q entries are a uniform subset.
            for j in 0..q {
                let pick = rand::Rng::random_range(&mut rng, j..m);
                ids.swap(j, pick);
            }
            let mut out = ids[..q].to_vec();
            out.sort_unstable();
            out
        }
    }
}

/// Everything the omniscient adversary may condition on besides the honest
/// reports themselves.
#[derive(Debug, Clone)]
pub struct RoundContext<'a> {
    pub round: u64,
    pub theta: &'a [f64],
    /// The learner's randomness for this round; attack noise is derived from
    /// it so reruns are bit-identical.
    pub stream: RngStream,
}

/// The attack randomness for one round, derived from the experiment's base
/// stream. Both the in-process pool and a networked worker derive their
/// noise through this same chain, so the two execution modes produce
/// bit-identical reports.
pub fn round_attack_stream(base: &RngStream, round: u64) -> RngStream {
    base.child_n(&[2, round])
}

/// Corrupt a single worker's report in place of its honest gradient `g`.
/// Covers the attacks a worker can mount alone; [`AttackSpec::StealthShift`]
/// requires the whole honest report matrix and is rejected here.
pub fn corrupt_report(
    spec: &AttackSpec,
    g: &[f64],
    worker: u32,
    round_stream: &RngStream,
) -> Result<Vec<f64>, ByzError> {
    spec.validate(g.len())?;
    match spec {
        AttackSpec::None => Ok(g.to_vec()),
        AttackSpec::SignFlip { scale } => Ok(g.iter().map(|v| -scale * v).collect()),
        AttackSpec::GaussianNoise { scale } => {
            // Per-worker stream: the noise a worker injects does not depend
            // on which other workers are faulty.
            let mut rng = round_stream.child_n(&[1, worker as u64]).rng();
            Ok(g.iter().map(|v| v + scale * gaussian(&mut rng)).collect())
        }
        AttackSpec::Constant { vector } => Ok(vector.clone()),
        AttackSpec::StealthShift { .. } => Err(ByzError::NeedsCollusion),
    }
}

fn stealth_reports(honest: &DenseMatrix, faulty: &[u32], delta: f64) -> Vec<f64> {
    let m = honest.cols();
    let d = honest.rows();
    let all: Vec<u32> = (0..m as u32).collect();
    let mu = honest.column_mean(&all);
    let mu_f = honest.column_mean(faulty);
    // Top principal direction of the honest reports.
    let mut cov = SymmetricMatrix::zeros(d);
    for j in 0..m {
        let g = honest.column(j);
        cov.add_outer(1.0 / m as f64, &sub(&g, &mu));
    }
    let (_, vectors) = symmetric_eigen(&cov);
    let u = vectors.column(0);
    // Largest honest distance from the mean: the disguise budget.
    let spread = (0..m)
        .map(|j| norm2(&sub(&honest.column(j), &mu)))
        .fold(0.0, f64::max);
    // The colluders all report mu_f + t*u. Requesting the full mean shift
    // needs t = (m/|F|)*delta; staying inside the spread bounds t by the
    // largest root of ||dev + t*u|| = spread with dev = mu_f - mu.
    let dev = sub(&mu_f, &mu);
    let b = dot(&dev, &u);
    let disc = b * b + spread * spread - dot(&dev, &dev);
    let t_max = if disc > 0.0 { (-b + disc.sqrt()).max(0.0) } else { 0.0 };
    let t = (m as f64 / faulty.len() as f64 * delta).min(t_max);
    let mut report = mu_f;
    axpy(&mut report, t, &u);
    report
}

/// Transform the honest report matrix into the reported one. Columns listed
/// in `faulty` are replaced according to the attack; everything else is
/// copied bit for bit.
pub fn apply_attack(
    spec: &AttackSpec,
    honest: &DenseMatrix,
    faulty: &[u32],
    ctx: &RoundContext<'_>,
) -> Result<DenseMatrix, ByzError> {
    let m = honest.cols();
    let d = honest.rows();
    spec.validate(d)?;
    for &id in faulty {
        if id as usize >= m {
            return Err(ByzError::IdOutOfRange { id, m });
        }
    }
    let mut reported = honest.clone();
    if faulty.is_empty() {
        return Ok(reported);
    }
    match spec {
        AttackSpec::None => {}
        AttackSpec::StealthShift { delta } => {
            let report = stealth_reports(honest, faulty, *delta);
            for &id in faulty {
                for (r, &v) in report.iter().enumerate() {
                    reported.set(r, id as usize, v);
                }
            }
        }
        _ => {
            for &id in faulty {
                let fake = corrupt_report(spec, &honest.column(id as usize), id, &ctx.stream)?;
                for (r, &v) in fake.iter().enumerate() {
                    reported.set(r, id as usize, v);
                }
            }
        }
    }
    Ok(reported)
}

/// In-process worker pool: computes every shard's honest gradient (in
/// parallel), then lets the configured attack rewrite the faulty columns.
/// Implements [`ReportSource`], so [`crate::learning::train`] runs against it
/// directly.
pub struct SimWorkerPool {
    data: Dataset,
    shards: Vec<Shard>,
    attack: AttackSpec,
    schedule: FaultSchedule,
    stream: RngStream,
}

impl SimWorkerPool {
    pub fn new(
        data: Dataset,
        m: usize,
        attack: AttackSpec,
        schedule: FaultSchedule,
        stream: RngStream,
    ) -> Result<Self, ByzError> {
        let shards = make_shards(data.len(), m)?;
        attack.validate(data.dim())?;
        schedule.validate(m)?;
        Ok(SimWorkerPool {
            data,
            shards,
            attack,
            schedule,
            stream,
        })
    }

    /// The honest gradient matrix at `theta`, one column per worker.
    fn honest_reports(&self, theta: &[f64]) -> Result<DenseMatrix, LearnError> {
        let columns: Vec<Vec<f64>> = self
            .shards
            .par_iter()
            .map(|s| local_gradient(&self.data, s, theta))
            .collect::<Result<_, _>>()?;
        Ok(DenseMatrix::from_columns(&columns))
    }
}

impl ReportSource for SimWorkerPool {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn workers(&self) -> usize {
        self.shards.len()
    }

    fn collect(&mut self, round: u64, theta: &[f64]) -> Result<GradientReport, LearnError> {
        let honest = self.honest_reports(theta)?;
        let m = self.shards.len();
        let all: Vec<u32> = (0..m as u32).collect();
        let honest_mean = honest.column_mean(&all);
        let faulty = select_faulty(&self.schedule, m, round);
        let ctx = RoundContext {
            round,
            theta,
            stream: round_attack_stream(&self.stream, round),
        };
        let reported = apply_attack(&self.attack, &honest, &faulty, &ctx)
            .map_err(|e| LearnError::Collect(Box::new(e)))?;
        Ok(GradientReport {
            gradients: reported,
            flagged: Vec::new(),
            honest_mean: Some(honest_mean),
        })
    }
}
