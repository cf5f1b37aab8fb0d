//! Euclidean projection onto the capped simplex
//! `{ w : 0 <= w_j <= cap, sum_j w_j = 1 }`.
//!
//! The projection is `w_j = clip(v_j - lambda, 0, cap)` for a dual `lambda`
//! making the sum one. The clipped sum is piecewise linear and non-increasing
//! in `lambda` with breakpoints at `v_j` and `v_j - cap`, so sorting the
//! breakpoints and scanning for the segment that crosses one solves for
//! `lambda` exactly in `O(n log n)`. The min–max solver projects thousands of
//! columns per call, which is why the exact scan (one pass after the sort)
//! is used instead of bisection (dozens of full-vector passes).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("capped simplex is empty: cap = {cap} must be positive")]
    NonPositiveCap { cap: f64 },
    #[error("capped simplex is infeasible: cap * len = {cap} * {len} < 1")]
    Infeasible { cap: f64, len: usize },
    #[error("cannot project an empty vector")]
    EmptyInput,
}

/// Absolute tolerance on `sum(w) - 1` at exit.
const SUM_TOL: f64 = 1e-12;

/// Project `v` onto the capped simplex with box bound `cap`.
///
/// Errors when the target set is empty (`cap <= 0` or `cap * v.len() < 1`).
/// The result satisfies the box constraints exactly and `|sum - 1| <= 1e-12`.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Result<Vec<f64>, ProjectionError> {
    if v.is_empty() {
        return Err(ProjectionError::EmptyInput);
    }
    if !(cap > 0.0) {
        return Err(ProjectionError::NonPositiveCap { cap });
    }
    let len = v.len();
    if cap * (len as f64) < 1.0 - 1e-12 {
        return Err(ProjectionError::Infeasible { cap, len });
    }
    assert!(v.iter().all(|x| x.is_finite()), "non-finite input");

    // Breakpoints of the clipped sum, ascending. Crossing `v_j - cap` moves
    // coordinate j from the cap onto its linear piece; crossing `v_j` drops
    // it to zero. Between events the sum is
    //   S(lambda) = n_cap * cap + sum_lin - n_lin * lambda.
    let mut events: Vec<(f64, bool)> = Vec::with_capacity(2 * len);
    for &x in v {
        events.push((x - cap, true)); // cap -> linear
        events.push((x, false)); // linear -> zero
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut n_cap = len as f64;
    let mut n_lin = 0.0_f64;
    let mut sum_lin = 0.0_f64;
    // Below the first event every coordinate saturates: S = len * cap >= 1.
    let mut seg_start = events[0].0 - 1.0;
    let mut lambda = None;
    let mut idx = 0;
    while idx <= events.len() {
        let seg_end = events.get(idx).map(|e| e.0).unwrap_or(f64::INFINITY);
        if seg_end > seg_start {
            let s_start = n_cap * cap + sum_lin - n_lin * seg_start;
            let s_end = if seg_end.is_finite() {
                n_cap * cap + sum_lin - n_lin * seg_end
            } else {
                0.0 // past the last event everything clips to zero
            };
            // S is non-increasing, so the first segment with
            // S(start) >= 1 >= S(end) contains the crossing.
            if s_start >= 1.0 - SUM_TOL && s_end <= 1.0 + SUM_TOL {
                let candidate = if n_lin > 0.0 {
                    (n_cap * cap + sum_lin - 1.0) / n_lin
                } else {
                    seg_start // flat segment with S == 1
                };
                lambda = Some(candidate.clamp(seg_start, seg_end));
                break;
            }
        }
        // apply every event at this breakpoint before the next segment
        let here = seg_end;
        while idx < events.len() && events[idx].0 == here {
            let (value, to_linear) = events[idx];
            if to_linear {
                n_cap -= 1.0;
                n_lin += 1.0;
                sum_lin += value + cap; // the v_j whose breakpoint this is
            } else {
                n_lin -= 1.0;
                sum_lin -= value;
            }
            idx += 1;
        }
        seg_start = here;
        if !here.is_finite() {
            break;
        }
    }
    let lambda = lambda.unwrap_or_else(|| {
        // Only reachable through float pathologies; the largest v works as a
        // safe fallback (everything clips to zero) before polishing below.
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    });

    let mut w: Vec<f64> = v.iter().map(|&x| (x - lambda).clamp(0.0, cap)).collect();
    // Polish accumulated rounding into the interior coordinates so the sum
    // holds to SUM_TOL even for large inputs.
    let s: f64 = w.iter().sum();
    let resid = 1.0 - s;
    if resid != 0.0 {
        let interior: Vec<usize> = (0..len).filter(|&j| w[j] > 0.0 && w[j] < cap).collect();
        if !interior.is_empty() {
            let share = resid / interior.len() as f64;
            for j in interior {
                w[j] = (w[j] + share).clamp(0.0, cap);
            }
        } else if resid.abs() <= 1e-9 {
            // fully saturated solution (tight cap): spread the float dust
            let share = resid / len as f64;
            for x in w.iter_mut() {
                *x += share;
            }
        }
    }
    Ok(w)
}
