//! Iterative filtering for robust mean estimation.
//!
//! Given `m` points of which up to an `epsilon` fraction may be adversarial,
//! the filter repeatedly solves the min–max spread program ([`crate::saddle`])
//! on the active set, scores each point by its residual energy along the
//! returned certificate, downweights proportionally to score, and drops
//! points whose weight falls to `1/2` or below. Two termination rules are
//! supported:
//!
//! * **sigma threshold** — stop once the weighted score mass `sum c_i tau_i`
//!   drops to `8 m sigma^2`, i.e. the active set's spread along every
//!   direction is explained by the assumed inlier scale `sigma`;
//! * **cardinality** (default) — stop before the active set would shrink
//!   below `alpha (2 + alpha) m / (4 - alpha)` with `alpha = 1 - epsilon`,
//!   which needs no scale parameter and caps how much mass filtering can
//!   ever remove.
//!
//! The final estimate is the plain arithmetic mean of the surviving points,
//! computed through the same folding helper as the non-robust mean so that a
//! run removing nothing is bit-identical to the sample mean.

use crate::numerics::{dot, DenseMatrix, RngStream};
use crate::saddle::{
    solve_saddle, Certificate, SaddleError, SaddleOptions, SaddleReport, WeightMatrix,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("epsilon must lie in [0, 0.25), got {0}")]
    BadEpsilon(f64),
    #[error("sigma-threshold termination requires sigma")]
    MissingSigma,
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("no points to filter")]
    NoPoints,
    #[error("filtering left no usable active set (epsilon {epsilon}, m = {m})")]
    Degenerate { epsilon: f64, m: usize },
    #[error("all scores are zero: active set is already consistent")]
    AlreadyConsistent,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Saddle(#[from] SaddleError),
}

/// Termination rule for [`robust_mean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Stop when `sum c_i tau_i <= 8 m sigma^2`; requires `sigma`.
    SigmaThreshold,
    /// Stop before the active set would shrink below the cardinality floor.
    Cardinality,
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Assumed corruption fraction, in `[0, 1/4)`; `alpha = 1 - epsilon`.
    pub epsilon: f64,
    /// Inlier scale; required by [`Termination::SigmaThreshold`].
    pub sigma: Option<f64>,
    pub termination: Termination,
    /// Relative duality-gap tolerance for the inner saddle solves. The
    /// termination tests have an 8x margin at the feasible uniform column,
    /// so filtering is robust to loose solves and the default favors speed.
    pub saddle_tol: f64,
    pub saddle_max_iter: usize,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            epsilon: 0.1,
            sigma: None,
            termination: Termination::Cardinality,
            saddle_tol: 0.05,
            saddle_max_iter: 40,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !self.epsilon.is_finite() || !(0.0..0.25).contains(&self.epsilon) {
            return Err(FilterError::BadEpsilon(self.epsilon));
        }
        if let Some(s) = self.sigma {
            if !s.is_finite() || s <= 0.0 {
                return Err(FilterError::BadSigma(s));
            }
        }
        if self.termination == Termination::SigmaThreshold && self.sigma.is_none() {
            return Err(FilterError::MissingSigma);
        }
        Ok(())
    }

    /// Box bound for each weight-matrix column, `(4 - a) / (a (2 + a) m)`,
    /// fixed by the original point count for the whole run.
    pub fn cap(&self, m: usize) -> f64 {
        let a = 1.0 - self.epsilon;
        (4.0 - a) / (a * (2.0 + a) * m as f64)
    }

    /// Minimum active-set size the cardinality rule protects,
    /// `a (2 + a) m / (4 - a)`. Equals `m` when `epsilon = 0` — no removal
    /// is ever allowed — and exactly the size at which the column cap stops
    /// being feasible.
    pub fn cardinality_floor(&self, m: usize) -> f64 {
        let a = 1.0 - self.epsilon;
        a * (2.0 + a) * m as f64 / (4.0 - a)
    }
}

/// Per-id filtering state. `weights` spans all original ids; removed ids keep
/// the weight they had at removal and are never updated again.
#[derive(Debug, Clone)]
pub struct FilterState {
    /// Active ids, ascending.
    pub active: Vec<u32>,
    /// Weight `c_i` per original id, in `[0, 1]`.
    pub weights: Vec<f64>,
    /// Scores of the active ids from the latest scoring pass, aligned with
    /// `active`.
    pub scores: Vec<f64>,
    pub round: usize,
}

/// One completed filtering round, with enough state to re-check the inlier
/// invariants afterwards.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    /// Ids removed this round (empty on the terminal round).
    pub removed: Vec<u32>,
    /// `sum over active of c_i tau_i` at scoring time.
    pub weighted_score: f64,
    /// Active ids after the round.
    pub active: Vec<u32>,
    /// Full per-id weights after the round.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Arithmetic mean over the final active set.
    pub estimate: Vec<f64>,
    /// Final active ids, ascending.
    pub active: Vec<u32>,
    pub trace: Vec<RoundTrace>,
    /// One report per inner saddle solve, in round order.
    pub reports: Vec<SaddleReport>,
}

/// Residual energy of each point along the certificate:
/// `tau_i = (v^T r_i)^2` with `r_i = y_i - sum_j y_j W_ji`, evaluated as
/// `(z_i - <z, w_i>)^2` for `z = Y^T v`.
pub fn compute_scores(
    points: &DenseMatrix,
    c: &[f64],
    w: &WeightMatrix,
    u: &Certificate,
) -> Result<Vec<f64>, FilterError> {
    let k = points.cols();
    if c.len() != k || w.len() != k {
        return Err(FilterError::Dimension(format!(
            "points {k} columns, {} weights, W of size {}",
            c.len(),
            w.len()
        )));
    }
    if u.direction.len() != points.rows() {
        return Err(FilterError::Dimension(format!(
            "certificate dimension {} vs points dimension {}",
            u.direction.len(),
            points.rows()
        )));
    }
    let z = points.tr_matvec(&u.direction);
    Ok((0..k)
        .map(|i| {
            let e = z[i] - dot(&z, w.column(i));
            e * e
        })
        .collect())
}

/// One downweighting pass: multiply each active weight by
/// `1 - tau_i / tau_max` and remove ids whose weight falls to `1/2` or below.
/// The arg-max id always reaches weight zero, so every pass removes at least
/// one point. Fails with [`FilterError::AlreadyConsistent`] when all scores
/// are zero — nothing separates the active points and the caller must stop.
pub fn downweight(state: &FilterState, scores: &[f64]) -> Result<FilterState, FilterError> {
    if scores.len() != state.active.len() {
        return Err(FilterError::Dimension(format!(
            "{} scores for {} active ids",
            scores.len(),
            state.active.len()
        )));
    }
    let tau_max = scores.iter().cloned().fold(0.0_f64, f64::max);
    if tau_max <= 0.0 {
        return Err(FilterError::AlreadyConsistent);
    }
    let mut next = state.clone();
    let mut active = Vec::with_capacity(state.active.len());
    let mut kept_scores = Vec::with_capacity(state.active.len());
    for (&id, &tau) in state.active.iter().zip(scores) {
        let c = next.weights[id as usize] * (1.0 - tau / tau_max);
        next.weights[id as usize] = c;
        if c > 0.5 {
            active.push(id);
            kept_scores.push(tau);
        }
    }
    next.active = active;
    next.scores = kept_scores;
    Ok(next)
}

/// Robust mean by iterative filtering. Points are columns; ids are column
/// indices. Runs `solve -> score -> terminate? -> downweight` for at most
/// `m` rounds and returns the mean over the surviving active set.
pub fn robust_mean(points: &DenseMatrix, config: &FilterConfig) -> Result<FilterOutput, FilterError> {
    config.validate()?;
    let m = points.cols();
    if m == 0 {
        return Err(FilterError::NoPoints);
    }
    let cap = config.cap(m);
    let floor = config.cardinality_floor(m);
    let stream = RngStream::new(config.seed, 0);
    let opts = SaddleOptions {
        tol: config.saddle_tol,
        max_iter: config.saddle_max_iter,
    };

    let mut state = FilterState {
        active: (0..m as u32).collect(),
        weights: vec![1.0; m],
        scores: vec![0.0; m],
        round: 0,
    };
    let mut trace = Vec::new();
    let mut reports = Vec::new();

    for round in 1..=m {
        state.round = round;
        if state.active.is_empty() || cap * (state.active.len() as f64) < 1.0 - 1e-12 {
            // the column constraint is infeasible below the cardinality
            // floor; only the sigma rule can steer here, and reaching it
            // means the data never looked consistent at any allowed size
            return Err(FilterError::Degenerate {
                epsilon: config.epsilon,
                m,
            });
        }
        let sub = points.select_columns(&state.active);
        let c: Vec<f64> = state
            .active
            .iter()
            .map(|&id| state.weights[id as usize])
            .collect();
        let (w, u, report) = solve_saddle(&sub, &c, cap, opts, &stream.child(round as u64))?;
        reports.push(report);
        let scores = compute_scores(&sub, &c, &w, &u)?;
        state.scores = scores.clone();
        let weighted: f64 = c.iter().zip(&scores).map(|(ci, ti)| ci * ti).sum();

        let mut removed = Vec::new();
        let mut done = false;
        match config.termination {
            Termination::SigmaThreshold => {
                let sigma = config.sigma.expect("validated");
                if weighted <= 8.0 * m as f64 * sigma * sigma {
                    done = true;
                } else {
                    match downweight(&state, &scores) {
                        Ok(next) => {
                            removed = diff_ids(&state.active, &next.active);
                            state = next;
                        }
                        // zero scores with the threshold exceeded can only
                        // happen through floating-point dust; stop rather
                        // than loop without progress
                        Err(FilterError::AlreadyConsistent) => done = true,
                        Err(e) => return Err(e),
                    }
                }
            }
            Termination::Cardinality => match downweight(&state, &scores) {
                Ok(next) => {
                    if (next.active.len() as f64) + 1e-9 < floor {
                        done = true;
                    } else {
                        removed = diff_ids(&state.active, &next.active);
                        state = next;
                    }
                }
                Err(FilterError::AlreadyConsistent) => done = true,
                Err(e) => return Err(e),
            },
        }
        state.round = round;
        trace.push(RoundTrace {
            round,
            removed,
            weighted_score: weighted,
            active: state.active.clone(),
            weights: state.weights.clone(),
        });
        if done {
            break;
        }
    }

    if state.active.is_empty() {
        return Err(FilterError::Degenerate {
            epsilon: config.epsilon,
            m,
        });
    }
    Ok(FilterOutput {
        estimate: points.column_mean(&state.active),
        active: state.active,
        trace,
        reports,
    })
}

fn diff_ids(before: &[u32], after: &[u32]) -> Vec<u32> {
    before
        .iter()
        .filter(|id| !after.contains(id))
        .cloned()
        .collect()
}

/// Per-round inlier diagnostics for simulated runs with known ground truth.
#[derive(Debug, Clone)]
pub struct RoundInvariants {
    pub round: usize,
    /// `|S0 ∩ A(t)|` — inliers still active after the round.
    pub inliers_active: usize,
    /// Required minimum active-set size `a (2 + a) m / (4 - a)`.
    pub cardinality_floor: f64,
    pub cardinality_ok: bool,
    /// `sum over inliers of (1 - c_i)`.
    pub inlier_weight_loss: f64,
    /// `sum over all ids of (1 - c_i)`.
    pub total_weight_loss: f64,
    /// Inlier loss at most `a/4` of the total loss.
    pub weight_ok: bool,
}

#[derive(Debug, Clone)]
pub struct InvariantReport {
    pub rounds: Vec<RoundInvariants>,
    pub all_hold: bool,
}

/// Check, per completed round, that filtering kept enough true inliers
/// (`|S0 ∩ A(t)| >= a (2 + a) m / (4 - a)`) and that inliers lost at most an
/// `a/4` share of all removed weight. Ground truth is only available in
/// simulation; this is a diagnostic, not part of the estimator.
pub fn assert_inlier_invariants(
    trace: &[RoundTrace],
    known_inlier_ids: &[u32],
    alpha: f64,
) -> InvariantReport {
    let mut rounds = Vec::with_capacity(trace.len());
    let mut all_hold = true;
    for row in trace {
        let m = row.weights.len();
        let floor = alpha * (2.0 + alpha) * m as f64 / (4.0 - alpha);
        let inliers_active = row
            .active
            .iter()
            .filter(|id| known_inlier_ids.contains(id))
            .count();
        let cardinality_ok = inliers_active as f64 >= floor - 1e-9;
        let inlier_weight_loss: f64 = known_inlier_ids
            .iter()
            .map(|&id| 1.0 - row.weights[id as usize])
            .sum();
        let total_weight_loss: f64 = row.weights.iter().map(|c| 1.0 - c).sum();
        let weight_ok =
            inlier_weight_loss <= alpha / 4.0 * total_weight_loss + 1e-12 * (1.0 + m as f64);
        all_hold &= cardinality_ok && weight_ok;
        rounds.push(RoundInvariants {
            round: row.round,
            inliers_active,
            cardinality_floor: floor,
            cardinality_ok,
            inlier_weight_loss,
            total_weight_loss,
            weight_ok,
        });
    }
    InvariantReport { rounds, all_hold }
}
