//! Min–max solver for the filtering weight program.
//!
//! Given points `y_1..y_k` (columns), nonnegative per-point weights `c`, and a
//! box bound `cap`, the program is
//!
//! ```text
//!   min_W max_U  psi(W, U) = sum_i c_i r_i^T U r_i,   r_i = y_i - sum_j y_j W_ji
//! ```
//!
//! where each column of `W` lives on the capped simplex
//! `{ w : 0 <= w_j <= cap, sum w = 1 }` and `U` ranges over the spectraplex
//! (PSD, trace <= 1). The inner maximum is attained at a rank-one `U = v v^T`
//! with `v` the top eigenvector of the weighted residual scatter
//! `M(W) = sum_i c_i r_i r_i^T`, so the outer problem is minimizing
//! `lambda_max(M(W))`.
//!
//! The solver alternates best responses while maintaining
//!
//! * the best `W` seen, scored by `lambda_max(M(W))` (a monotone upper bound);
//! * a dictionary of certificate directions collected along the way — every
//!   iterate's top eigenvector plus its near-tied followers, since at the
//!   optimum the largest eigenvalues cluster and the dual mixes exactly those;
//! * certified lower bounds `min_W psi(., U)` for dual candidates `U`:
//!   closed-form when a single direction dominates, otherwise projected
//!   gradient per column plus a linear-minorant correction at the best
//!   iterate, so the bound stays valid even when the inner solve is inexact.
//!
//! Dual candidates come from two places. A cutting-plane pass maximizes the
//! restricted dual over dictionary mixtures: each inner minimization emits an
//! exact linear cut, and a small matrix game over the cuts proposes the next
//! mixture. That alone stalls on near-isotropic instances — a fixed set of
//! rank-one directions cannot express a dual certificate whose eigenbasis
//! keeps rotating inside the top cluster — so each sweep also refines the
//! incumbent through the smoothed surrogate `mu ln sum_j exp(lambda_j / mu)`,
//! whose gradient is the `psi` gradient against the Boltzmann mixture of the
//! current spectrum. Annealing `mu` with the measured gap makes that mixture
//! track the optimal dual, and its bound closes the gap at a geometric rate.
//!
//! Every inner minimizer doubles as a primal candidate; that pairing is what
//! drives the duality gap to zero when plain alternation would cycle between
//! eigendirections. The reported gap is always a true duality gap, so
//! `converged = false` results are still usable, just not certified to
//! tolerance.

use crate::numerics::{
    dot, norm2, project_capped_simplex, symmetric_eigen, top_eigpair, DenseMatrix, EigOptions,
    ProjectionError, RngStream, SymmetricMatrix,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaddleError {
    #[error("infeasible column constraint: cap {cap} * active {len} < 1")]
    InfeasibleCap { cap: f64, len: usize },
    #[error("no active points")]
    EmptyActiveSet,
    #[error("weights must be finite and in [0, 1]: {0}")]
    BadWeights(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("weight matrix violates feasibility: {0}")]
    Infeasible(String),
}

/// Value floor used in relative termination tests, so an exactly-zero
/// objective (identical points) terminates immediately.
pub const PSI_FLOOR: f64 = 1e-12;

/// Dictionary size limit; directions the dual mixture leans on least are
/// dropped first.
const MAX_DIRECTIONS: usize = 32;

#[derive(Debug, Clone, Copy)]
pub struct SaddleOptions {
    /// Relative duality-gap tolerance.
    pub tol: f64,
    /// Maximum best-response sweeps.
    pub max_iter: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        SaddleOptions {
            tol: 1e-3,
            max_iter: 100,
        }
    }
}

/// Column-stochastic weight matrix with a box cap; `cols[i][j]` is the weight
/// `W_ji` that point `j` contributes to the reference point for column `i`.
/// `ids` carries the caller's labels for the active points (positional by
/// default), purely for bookkeeping in traces.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub ids: Vec<u32>,
    pub cap: f64,
    cols: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn new(cap: f64, cols: Vec<Vec<f64>>) -> Self {
        let ids = (0..cols.len() as u32).collect();
        WeightMatrix { ids, cap, cols }
    }

    pub fn with_ids(mut self, ids: Vec<u32>) -> Self {
        assert_eq!(ids.len(), self.cols.len());
        self.ids = ids;
        self
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.cols[i]
    }

    /// Uniform columns; feasible exactly when `cap * k >= 1`.
    pub fn uniform(cap: f64, k: usize) -> Self {
        let w = 1.0 / k as f64;
        WeightMatrix::new(cap, vec![vec![w; k]; k])
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.cols
            .iter()
            .flat_map(|c| c.iter())
            .map(|x| x * x)
            .sum()
    }

    /// Box and sum constraints per column, plus the Frobenius bound implied
    /// by them (`||W||_F^2 <= cap * k` since each column has unit mass).
    pub fn check_feasible(&self) -> Result<(), SaddleError> {
        let k = self.cols.len();
        for (i, col) in self.cols.iter().enumerate() {
            if col.len() != k {
                return Err(SaddleError::Infeasible(format!(
                    "column {i} has length {} != {k}",
                    col.len()
                )));
            }
            let mut sum = 0.0;
            for &w in col {
                if !(w >= -1e-12 && w <= self.cap + 1e-12) {
                    return Err(SaddleError::Infeasible(format!(
                        "column {i} entry {w} outside [0, {}]",
                        self.cap
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-10 {
                return Err(SaddleError::Infeasible(format!(
                    "column {i} sums to {sum}"
                )));
            }
        }
        let fro = self.frobenius_sq();
        let bound = self.cap * k as f64;
        if fro > bound * (1.0 + 1e-9) + 1e-12 {
            return Err(SaddleError::Infeasible(format!(
                "Frobenius^2 {fro} exceeds cap * k = {bound}"
            )));
        }
        Ok(())
    }
}

/// Rank-one spectraplex certificate `U = direction direction^T`, with the
/// quadratic-form value it attains.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub direction: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SaddleReport {
    /// Primal objective `lambda_max(M(W))` at the returned weights.
    pub value: f64,
    /// Certified duality gap: `value - max` over certified lower bounds.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_inputs(points: &DenseMatrix, c: &[f64], cap: f64) -> Result<(), SaddleError> {
    let k = points.cols();
    if k == 0 {
        return Err(SaddleError::EmptyActiveSet);
    }
    if c.len() != k {
        return Err(SaddleError::Dimension(format!(
            "{} weights for {k} points",
            c.len()
        )));
    }
    for &ci in c {
        if !ci.is_finite() || !(0.0..=1.0).contains(&ci) {
            return Err(SaddleError::BadWeights(format!("{ci}")));
        }
    }
    if !(cap > 0.0) || cap * (k as f64) < 1.0 - 1e-12 {
        return Err(SaddleError::InfeasibleCap { cap, len: k });
    }
    Ok(())
}

/// Residual matrix R with columns `r_i = y_i - sum_j y_j W_ji`.
fn residuals(points: &DenseMatrix, w: &WeightMatrix) -> DenseMatrix {
    let d = points.rows();
    let k = points.cols();
    let mut r = DenseMatrix::zeros(d, k);
    for i in 0..k {
        let col = w.column(i);
        for row in 0..d {
            let prow = points.row(row);
            let mut s = prow[i];
            for (j, &wj) in col.iter().enumerate() {
                s -= prow[j] * wj;
            }
            r.set(row, i, s);
        }
    }
    r
}

/// Weighted residual scatter `M(W) = sum_i c_i r_i r_i^T`.
fn scatter(resid: &DenseMatrix, c: &[f64]) -> SymmetricMatrix {
    let d = resid.rows();
    let mut m = SymmetricMatrix::zeros(d);
    let mut col = vec![0.0; d];
    for i in 0..resid.cols() {
        if c[i] == 0.0 {
            continue;
        }
        for (row, slot) in col.iter_mut().enumerate() {
            *slot = resid.get(row, i);
        }
        m.add_outer(c[i], &col);
    }
    m
}

fn scatter_of(points: &DenseMatrix, w: &WeightMatrix, c: &[f64]) -> SymmetricMatrix {
    scatter(&residuals(points, w), c)
}

/// `psi(W, U)` for a rank-one certificate: `sum_i c_i <v, r_i>^2`.
pub fn psi_value(points: &DenseMatrix, c: &[f64], w: &WeightMatrix, u: &Certificate) -> f64 {
    assert_eq!(points.cols(), c.len());
    assert!((norm2(&u.direction) - 1.0).abs() <= 1e-8, "non-unit direction");
    let r = residuals(points, w);
    let z = r.tr_matvec(&u.direction);
    z.iter().zip(c).map(|(zi, ci)| ci * zi * zi).sum()
}

/// Minimize `<g, w>` over the capped simplex: stack `cap` mass on the
/// smallest entries (ties by ascending index), remainder on the next.
/// Returns the optimal value and the minimizing column.
fn min_linear_on_capped_simplex(g: &[f64], cap: f64) -> (f64, Vec<f64>) {
    let k = g.len();
    let mut order: Vec<usize> = (0..k).collect();
    // stable sort keeps ascending-index order on ties
    order.sort_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap());
    let mut w = vec![0.0; k];
    let mut remaining = 1.0_f64;
    let mut value = 0.0;
    for &j in &order {
        let take = remaining.min(cap);
        w[j] = take;
        value += take * g[j];
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    (value, w)
}

fn max_linear_on_capped_simplex(g: &[f64], cap: f64) -> (f64, Vec<f64>) {
    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
    let (v, w) = min_linear_on_capped_simplex(&neg, cap);
    (-v, w)
}

/// Best response of the weight player to a rank-one certificate.
///
/// Projecting everything onto the certificate direction `v` turns each column
/// into the scalar problem `min (z_i - <z, w>)^2` with `z = Y^T v`. The
/// reachable set of `<z, w>` over the capped simplex is the interval between
/// the greedy-min and greedy-max fillings, so the optimum clamps `z_i` into
/// that interval; the column realizing it is the matching convex combination
/// of the two greedy fillings (a water-filling along `v`).
pub fn best_response_w(
    points: &DenseMatrix,
    c: &[f64],
    u: &Certificate,
    cap: f64,
) -> Result<WeightMatrix, SaddleError> {
    check_inputs(points, c, cap)?;
    let z = points.tr_matvec(&u.direction);
    let (lo, w_lo) = min_linear_on_capped_simplex(&z, cap);
    let (hi, w_hi) = max_linear_on_capped_simplex(&z, cap);
    let k = z.len();
    let mut cols = Vec::with_capacity(k);
    for i in 0..k {
        let target = z[i].clamp(lo, hi);
        let col = if hi - lo <= f64::EPSILON * (1.0 + hi.abs() + lo.abs()) {
            w_lo.clone()
        } else {
            let s = ((target - lo) / (hi - lo)).clamp(0.0, 1.0);
            w_lo.iter()
                .zip(&w_hi)
                .map(|(a, b)| (1.0 - s) * a + s * b)
                .collect()
        };
        cols.push(col);
    }
    Ok(WeightMatrix::new(cap, cols))
}

/// Best response of the certificate player: top eigenpair of `M(W)`.
pub fn best_response_u(points: &DenseMatrix, c: &[f64], w: &WeightMatrix) -> Certificate {
    let m = scatter_of(points, w, c);
    let (values, vectors) = symmetric_eigen(&m);
    Certificate {
        direction: vectors.column(0),
        value: values[0].max(0.0),
    }
}

/// Closed-form `min_W psi(., v v^T)` for one direction: per column the
/// distance from `z_i` to the reachable interval, squared and c-weighted.
fn solo_direction_min(z: &[f64], c: &[f64], cap: f64) -> f64 {
    let (lo, _) = min_linear_on_capped_simplex(z, cap);
    let (hi, _) = max_linear_on_capped_simplex(z, cap);
    z.iter()
        .zip(c)
        .map(|(&zi, &ci)| {
            let t = zi.clamp(lo, hi);
            ci * (zi - t) * (zi - t)
        })
        .sum()
}

/// Certificate directions collected during the solve, with the running
/// tallies used to form candidate dual mixtures.
struct Dictionary {
    dirs: Vec<Vec<f64>>,
    /// cached projections `z^k = Y^T v_k`
    zs: Vec<Vec<f64>>,
    /// visit counts (uniform-average mixture)
    counts: Vec<f64>,
    /// closed-form single-direction lower bounds
    solo: Vec<f64>,
    /// mixture weights from the latest restricted-dual solve
    omega: Vec<f64>,
    total: f64,
}

impl Dictionary {
    fn new() -> Self {
        Dictionary {
            dirs: Vec::new(),
            zs: Vec::new(),
            counts: Vec::new(),
            solo: Vec::new(),
            omega: Vec::new(),
            total: 0.0,
        }
    }

    fn len(&self) -> usize {
        self.dirs.len()
    }

    /// Insert a direction, merging with any near-parallel entry
    /// (`v v^T` is sign-invariant, so merging uses |cos|).
    fn push(&mut self, dir: &[f64], points: &DenseMatrix, c: &[f64], cap: f64) {
        self.total += 1.0;
        for (k, v) in self.dirs.iter().enumerate() {
            if dot(v, dir).abs() >= 1.0 - 1e-6 {
                self.counts[k] += 1.0;
                return;
            }
        }
        let z = points.tr_matvec(dir);
        let solo = solo_direction_min(&z, c, cap);
        self.dirs.push(dir.to_vec());
        self.zs.push(z);
        self.counts.push(1.0);
        self.solo.push(solo);
        self.omega.push(0.0);
        if self.dirs.len() > MAX_DIRECTIONS {
            // retire the entry the dual leans on least (fewest visits on ties)
            let mut drop = 0;
            for k in 1..self.dirs.len() {
                if (self.omega[k], self.counts[k]) < (self.omega[drop], self.counts[drop]) {
                    drop = k;
                }
            }
            self.dirs.remove(drop);
            self.zs.remove(drop);
            let removed = self.counts.remove(drop);
            self.total -= removed;
            self.solo.remove(drop);
            self.omega.remove(drop);
        }
    }

    fn count_weights(&self) -> Vec<f64> {
        let t: f64 = self.counts.iter().sum();
        self.counts.iter().map(|c| c / t).collect()
    }

    /// Smoothed restart point for the restricted-dual solve: the previous
    /// sweep's mixture blended with uniform so fresh directions get mass.
    fn omega_start(&self) -> Vec<f64> {
        let kk = self.omega.len();
        let t: f64 = self.omega.iter().sum();
        if t <= 0.0 {
            return self.count_weights();
        }
        self.omega
            .iter()
            .map(|w| 0.9 * w / t + 0.1 / kk as f64)
            .collect()
    }

    /// Valid but loose screen: `min_W sum_k w_k psi >= sum_k w_k min_W psi`.
    fn cheap_lower_bound(&self, omega: &[f64]) -> f64 {
        omega.iter().zip(&self.solo).map(|(w, s)| w * s).sum()
    }

    /// Collapse the latest dual mixture to its dominant direction.
    fn collapse(&self, d: usize, eig: EigOptions, stream: &RngStream) -> Vec<f64> {
        if self.dirs.len() == 1 {
            return self.dirs[0].clone();
        }
        let t: f64 = self.omega.iter().sum();
        let weights = if t > 0.0 {
            self.omega.iter().map(|w| w / t).collect()
        } else {
            self.count_weights()
        };
        let mut m = SymmetricMatrix::zeros(d);
        for (v, &wk) in self.dirs.iter().zip(&weights) {
            m.add_outer(wk, v);
        }
        top_eigpair(&m, eig, stream).vector
    }
}

/// Approximate solution of the matrix game `max_{omega} min_j <cut_j, omega>`
/// over the simplex by multiplicative weights against best-response cut
/// choices. Returns the averaged mixture and its model value
/// `min_j <cut_j, avg>`. Each cut is an exact `psi` evaluation at a feasible
/// weight matrix, so the model overestimates the restricted dual pointwise:
/// when even the model cannot beat the incumbent bound, further evaluations
/// on this dictionary are pointless. Steering only — never a certificate.
fn cut_game(cuts: &[Vec<f64>], init: &[f64], rounds: usize) -> (Vec<f64>, f64) {
    let kk = init.len();
    let scale = cuts
        .iter()
        .flat_map(|cut| cut.iter())
        .cloned()
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let eta = (8.0 * (kk.max(2) as f64).ln() / rounds as f64).sqrt() / scale;
    let mut logw: Vec<f64> = init.iter().map(|w| w.max(1e-12).ln()).collect();
    let mut avg = vec![0.0; kk];
    let mut omega = vec![0.0; kk];
    for _ in 0..rounds {
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 0.0;
        for (w, l) in omega.iter_mut().zip(&logw) {
            *w = (l - m).exp();
            t += *w;
        }
        for w in omega.iter_mut() {
            *w /= t;
        }
        let mut j_best = 0;
        let mut payoff = f64::INFINITY;
        for (j, cut) in cuts.iter().enumerate() {
            let p = dot(cut, &omega);
            if p < payoff {
                payoff = p;
                j_best = j;
            }
        }
        for (l, &g) in logw.iter_mut().zip(&cuts[j_best]) {
            *l += eta * g;
        }
        for (a, &w) in avg.iter_mut().zip(&omega) {
            *a += w;
        }
    }
    for a in avg.iter_mut() {
        *a /= rounds as f64;
    }
    let value = cuts
        .iter()
        .map(|cut| dot(cut, &avg))
        .fold(f64::INFINITY, f64::min);
    (avg, value)
}

/// Outcome of one inner minimization `min_W psi(., U_omega)`.
struct InnerMin {
    /// certified lower bound (linear-minorant corrected)
    lower: f64,
    /// per-column minimizers found (feasible; doubles as a primal candidate)
    columns: Vec<Vec<f64>>,
    /// realized `psi(W~, v_k)` per dictionary direction at the best iterate
    realized: Vec<f64>,
}

/// Projected-gradient descent per column with a Frank–Wolfe linear-minorant
/// correction, giving a certified lower bound regardless of how far the
/// descent got. Columns decouple: each solves
/// `min_w sum_k omega_k (z^k_i - <z^k, w>)^2` over the capped simplex.
fn inner_min_bound(
    zs: &[Vec<f64>],
    omega: &[f64],
    c: &[f64],
    cap: f64,
    warm: Option<&[Vec<f64>]>,
    max_steps: usize,
) -> Result<InnerMin, SaddleError> {
    let k = c.len();
    let kk = zs.len();
    // Lipschitz constant: 2 lambda_max(H), H = sum_k omega_k z^k z^k^T,
    // estimated by deterministic power iteration with the trace as fallback.
    let trace: f64 = zs.iter().zip(omega).map(|(z, w)| w * dot(z, z)).sum();
    let mut lam = trace.max(f64::MIN_POSITIVE);
    {
        let mut x = vec![1.0 / (k as f64).sqrt(); k];
        for _ in 0..30 {
            let mut y = vec![0.0; k];
            for (z, &wk) in zs.iter().zip(omega) {
                let s = wk * dot(z, &x);
                for (yi, zi) in y.iter_mut().zip(z) {
                    *yi += s * zi;
                }
            }
            let n = norm2(&y);
            if n <= f64::MIN_POSITIVE {
                break;
            }
            lam = n;
            x = y;
            for xi in x.iter_mut() {
                *xi /= n;
            }
        }
        lam = lam.min(trace).max(f64::MIN_POSITIVE);
    }
    let step = 1.0 / (2.0 * lam);

    let uniform = vec![1.0 / k as f64; k];
    let mut lower = 0.0;
    let mut columns = Vec::with_capacity(k);
    let mut realized = vec![0.0; kk];
    let mut grad = vec![0.0; k];
    let mut errs = vec![0.0; kk];
    for i in 0..k {
        let mut w = warm
            .and_then(|ws| ws.get(i))
            .cloned()
            .unwrap_or_else(|| uniform.clone());
        // f(w) = sum_k omega_k (z^k_i - <z^k, w>)^2; c_i applied at the end.
        let eval = |w: &[f64], grad: &mut [f64], errs: &mut [f64]| -> f64 {
            for g in grad.iter_mut() {
                *g = 0.0;
            }
            let mut f = 0.0;
            for ((z, &wk), e) in zs.iter().zip(omega).zip(errs.iter_mut()) {
                let err = z[i] - dot(z, w);
                *e = err;
                f += wk * err * err;
                let coef = -2.0 * wk * err;
                for (g, zj) in grad.iter_mut().zip(z) {
                    *g += coef * zj;
                }
            }
            f
        };
        let mut f = eval(&w, &mut grad, &mut errs);
        let mut best_f = f;
        let mut best_w = w.clone();
        let mut stall = 0;
        for _ in 0..max_steps {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
            w = project_capped_simplex(&trial, cap)?;
            let fnew = eval(&w, &mut grad, &mut errs);
            if fnew < best_f {
                best_f = fnew;
                best_w = w.clone();
            }
            if f - fnew <= 1e-11 * f.abs().max(1e-13) {
                stall += 1;
                if stall >= 2 {
                    break;
                }
            } else {
                stall = 0;
            }
            f = fnew;
        }
        // Linear minorant at the best iterate certifies the column minimum:
        // f(w*) >= f(w~) + min_{u in C} <grad, u - w~>.
        let fb = eval(&best_w, &mut grad, &mut errs);
        for (r, e) in realized.iter_mut().zip(&errs) {
            *r += c[i] * e * e;
        }
        let (lin_min, _) = min_linear_on_capped_simplex(&grad, cap);
        let bound = (fb + lin_min - dot(&grad, &best_w)).max(0.0);
        lower += c[i] * bound;
        columns.push(best_w);
    }
    Ok(InnerMin {
        lower,
        columns,
        realized,
    })
}

/// Score a candidate weight matrix against the incumbent, replacing it when
/// the candidate's top eigenvalue is smaller. Returns that eigenpair so the
/// caller can feed the direction back into the dictionary.
fn absorb_candidate(
    points: &DenseMatrix,
    c: &[f64],
    cap: f64,
    columns: Vec<Vec<f64>>,
    best_val: &mut f64,
    best_w: &mut WeightMatrix,
) -> (f64, Vec<f64>) {
    let w_cand = WeightMatrix::new(cap, columns);
    let m_cand = scatter_of(points, &w_cand, c);
    let (values, vectors) = symmetric_eigen(&m_cand);
    let val = values[0].max(0.0);
    let dir = vectors.column(0);
    if val < *best_val {
        *best_val = val;
        *best_w = w_cand;
    }
    (val, dir)
}

/// Smoothed primal refinement: approximately minimize the soft-max surrogate
/// `f_mu(W) = mu ln sum_j exp(lambda_j(M(W)) / mu)`, a smooth convex upper
/// bound on `lambda_max(M(W))` within `mu ln d`. The gradient is the `psi`
/// gradient against the Boltzmann mixture of the current spectrum, so at a
/// near-stationary point that mixture doubles as a near-optimal dual — this
/// couples the mixture weights to the iterate instead of guessing them.
/// Monotone projected gradient with an adaptive step; returns the best
/// columns found plus the mixture (directions, weights) at that point.
#[allow(clippy::type_complexity)]
fn smoothed_descent(
    points: &DenseMatrix,
    c: &[f64],
    cap: f64,
    start: &WeightMatrix,
    mu: f64,
    max_steps: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>), SaddleError> {
    let k = points.cols();
    let d = points.rows();
    let f_of = |spec: &[f64]| -> f64 {
        let top = spec[0];
        top + mu * spec.iter().map(|l| ((l - top) / mu).exp()).sum::<f64>().ln()
    };
    let softmax = |spec: &[f64]| -> Vec<f64> {
        let top = spec[0];
        let mut w: Vec<f64> = spec.iter().map(|l| ((l - top) / mu).exp()).collect();
        let t: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= t;
        }
        w
    };

    let mut cols: Vec<Vec<f64>> = (0..k).map(|i| start.column(i).to_vec()).collect();
    let w0 = WeightMatrix::new(cap, cols.clone());
    let m0 = scatter_of(points, &w0, c);
    let (mut spec, mut vecs) = symmetric_eigen(&m0);
    let mut f_cur = f_of(&spec);
    let mut best_f = f_cur;
    let mut best_cols = cols.clone();
    let mut best_spec = spec.clone();
    let mut best_vecs = vecs.clone();
    let mut step = 0.0;
    for _ in 0..max_steps {
        let omega_full = softmax(&spec);
        let mut omega = Vec::new();
        let mut zs = Vec::new();
        for (j, &om) in omega_full.iter().enumerate() {
            if om >= 1e-12 {
                omega.push(om);
                zs.push(points.tr_matvec(&vecs.column(j)));
            }
        }
        if step == 0.0 {
            // the gradient is Lipschitz with constant at most twice the
            // mixture's second moment (c_i <= 1), undershooting is safe
            let tr: f64 = zs.iter().zip(&omega).map(|(z, &om)| om * dot(z, z)).sum();
            step = 1.0 / (2.0 * tr.max(f64::MIN_POSITIVE));
        }
        let mut trial = Vec::with_capacity(k);
        for (i, wi) in cols.iter().enumerate() {
            let mut g = vec![0.0; k];
            for (z, &om) in zs.iter().zip(&omega) {
                let coef = -2.0 * c[i] * om * (z[i] - dot(z, wi));
                for (gj, zj) in g.iter_mut().zip(z) {
                    *gj += coef * zj;
                }
            }
            let moved: Vec<f64> = wi.iter().zip(&g).map(|(w, gi)| w - step * gi).collect();
            trial.push(project_capped_simplex(&moved, cap)?);
        }
        let wt = WeightMatrix::new(cap, trial.clone());
        let mt = scatter_of(points, &wt, c);
        let (spec_t, vecs_t) = symmetric_eigen(&mt);
        let f_t = f_of(&spec_t);
        if f_t <= f_cur {
            cols = trial;
            spec = spec_t;
            vecs = vecs_t;
            f_cur = f_t;
            if f_cur < best_f {
                best_f = f_cur;
                best_cols = cols.clone();
                best_spec = spec.clone();
                best_vecs = vecs.clone();
            }
            step *= 1.25;
        } else {
            step *= 0.4;
            if step < 1e-18 {
                break;
            }
        }
    }
    let omega_full = softmax(&best_spec);
    let mut dirs = Vec::new();
    let mut omega = Vec::new();
    for j in 0..d {
        if omega_full[j] >= 1e-9 {
            dirs.push(best_vecs.column(j));
            omega.push(omega_full[j]);
        }
    }
    let t: f64 = omega.iter().sum();
    for om in omega.iter_mut() {
        *om /= t;
    }
    Ok((best_cols, dirs, omega))
}

/// Solve the min–max program. Returns the best weight matrix seen, the dual
/// mixture collapsed to its dominant direction (its `value` is the quadratic
/// form of the returned `W`'s scatter along that direction), and a report
/// with the primal value and certified duality gap.
pub fn solve_saddle(
    points: &DenseMatrix,
    c: &[f64],
    cap: f64,
    opts: SaddleOptions,
    stream: &RngStream,
) -> Result<(WeightMatrix, Certificate, SaddleReport), SaddleError> {
    check_inputs(points, c, cap)?;
    let k = points.cols();
    let d = points.rows();
    let eig = EigOptions::default();
    // larger instances get a stall window after which further certificate
    // averaging is abandoned; small ones run out their sweep budget
    let plateau_window = if k > 120 {
        Some(5)
    } else if k > 60 {
        Some(18)
    } else {
        None
    };

    let mut w_cur = WeightMatrix::uniform(cap, k);
    let mut best_w = w_cur.clone();
    let mut best_val = f64::INFINITY;
    let mut best_lower = 0.0_f64;
    let mut dict = Dictionary::new();
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut gap = f64::INFINITY;
    let mut gap_history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut latest = Certificate {
        direction: vec![0.0; d],
        value: 0.0,
    };

    for sweep in 1..=opts.max_iter {
        iterations = sweep;
        // Certificate response to the current weights. The scatter is only
        // d x d, so a full spectrum costs no more than a power iteration and
        // hands over the near-tied follow-up directions for free.
        let m_cur = scatter_of(points, &w_cur, c);
        let (spec, vecs) = symmetric_eigen(&m_cur);
        let top_val = spec[0].max(0.0);
        let top_vec = vecs.column(0);
        if top_val < best_val {
            best_val = top_val;
            best_w = w_cur.clone();
        }
        dict.push(&top_vec, points, c, cap);
        // near-tied follow-up eigenvectors join the dictionary: at the
        // optimum the top eigenvalues cluster and the dual mixes exactly those
        for j in 1..d.min(3) {
            if spec[j] < 0.5 * spec[0] {
                break;
            }
            dict.push(&vecs.column(j), points, c, cap);
        }
        latest = Certificate {
            direction: top_vec,
            value: top_val,
        };

        // certified lower bounds against candidate dual mixtures
        if dict.len() == 1 {
            best_lower = best_lower.max(dict.solo[0]);
        } else {
            let small = k <= 60;
            // cheap screens: the uniform visit average and the previous
            // sweep's mixture (any simplex point gives a valid bound)
            best_lower = best_lower.max(dict.cheap_lower_bound(&dict.count_weights()));
            best_lower = best_lower.max(dict.cheap_lower_bound(&dict.omega_start()));
            // Restricted dual over the dictionary: maximize
            // `F(omega) = min_W sum_k omega_k psi(W, v_k v_k^T)` — concave in
            // omega — by cutting planes. Each inner minimization certifies a
            // bound at its omega and emits the exact cut
            // `omega -> <realized, omega>` overestimating `F`; the matrix
            // game over the cuts proposes the next omega, and the loop stops
            // once even the cut model cannot meaningfully beat the bank.
            let evals = 2;
            let steps = if small {
                120
            } else if warm.is_some() {
                20
            } else {
                40
            };
            let mut omega = dict.omega_start();
            let mut cuts: Vec<Vec<f64>> = Vec::new();
            let mut pending: Vec<Vec<f64>> = Vec::new();
            for _ in 0..evals {
                let inner = inner_min_bound(&dict.zs, &omega, c, cap, warm.as_deref(), steps)?;
                best_lower = best_lower.max(inner.lower);
                // the inner minimizer is a legitimate primal candidate
                let (_, dir) = absorb_candidate(
                    points,
                    c,
                    cap,
                    inner.columns.clone(),
                    &mut best_val,
                    &mut best_w,
                );
                pending.push(dir);
                warm = Some(inner.columns);
                cuts.push(inner.realized);
                let (next, model) = cut_game(&cuts, &omega, 2000);
                dict.omega = next.clone();
                if model - best_lower <= 0.1 * (best_val - best_lower).max(0.0) {
                    break;
                }
                omega = next;
            }
            // candidate directions join the dictionary only now, so cut
            // entries stayed index-aligned during the solve above
            for dir in pending {
                dict.push(&dir, points, c, cap);
            }
            // Smoothed refinement from the incumbent. Complementary slackness
            // puts the optimal dual's support inside the top eigenspace of
            // the optimal scatter; annealing the soft-max temperature with
            // the remaining gap makes the refined iterate's Boltzmann mixture
            // converge to that dual, so it is both the next bound candidate
            // and the supply of missing dictionary directions.
            let denom = ((d + 1) as f64).ln();
            let gap_now = (best_val - best_lower).max(0.0);
            let mu = (0.25 * gap_now / denom)
                .max(0.0625 * opts.tol * best_val.max(PSI_FLOOR) / denom)
                .max(f64::MIN_POSITIVE);
            let t_steps = if small { 60 } else { 12 };
            let (sm_cols, sm_dirs, sm_omega) =
                smoothed_descent(points, c, cap, &best_w, mu, t_steps)?;
            absorb_candidate(points, c, cap, sm_cols, &mut best_val, &mut best_w);
            if sm_dirs.len() >= 2 {
                let zs: Vec<Vec<f64>> = sm_dirs.iter().map(|v| points.tr_matvec(v)).collect();
                let inner = inner_min_bound(&zs, &sm_omega, c, cap, warm.as_deref(), steps)?;
                best_lower = best_lower.max(inner.lower);
                let (_, dir) = absorb_candidate(
                    points,
                    c,
                    cap,
                    inner.columns.clone(),
                    &mut best_val,
                    &mut best_w,
                );
                dict.push(&dir, points, c, cap);
                warm = Some(inner.columns);
            }
            for v in sm_dirs.iter().take(8) {
                dict.push(v, points, c, cap);
            }
        }

        gap = best_val - best_lower;
        gap_history.push(gap);
        if gap <= opts.tol * best_val.max(PSI_FLOOR) {
            converged = true;
            break;
        }
        // Plateau guard (large instances only): when the certified gap has
        // improved by under 2% across the trailing window, further sweeps are
        // not going to close it at a useful rate; stop and report the honest
        // gap. Small instances are cheap enough to run out their budget.
        let n = gap_history.len();
        if let Some(window) = plateau_window {
            if n > window {
                let past = gap_history[n - 1 - window];
                if past - gap < 0.02 * past {
                    break;
                }
            }
        }
        // weight player responds to the newest certificate
        w_cur = best_response_w(points, c, &latest, cap)?;
    }

    let final_dir = if dict.len() == 0 {
        latest.direction
    } else {
        dict.collapse(d, eig, &stream.child_n(&[0, 9]))
    };
    let m_best = scatter_of(points, &best_w, c);
    let cert_value = m_best.quadratic_form(&final_dir).max(0.0);
    let report = SaddleReport {
        value: best_val,
        gap,
        iterations,
        converged,
    };
    best_w.check_feasible()?;
    Ok((
        best_w,
        Certificate {
            direction: final_dir,
            value: cert_value,
        },
        report,
    ))
}
