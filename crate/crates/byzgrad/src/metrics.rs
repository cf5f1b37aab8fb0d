//! CSV schemas for experiment output.
//!
//! Two fixed, versioned headers: one row per training round
//! ([`METRICS_CSV_HEADER`]) and one row per sweep cell
//! ([`BENCH_CSV_HEADER`]). Numbers are written with Rust's shortest
//! round-trip float formatting, so rows are byte-stable for a given seed;
//! unknown quantities (no ground truth, no honest mean) appear as `NaN`.
//! The `seconds` column is wall-clock time and is the one deliberately
//! nondeterministic column.

use crate::learning::RoundMetrics;

/// Header for per-round training metrics (schema v1).
pub const METRICS_CSV_HEADER: &str = "experiment,round,error,deviation,removals,flags,seconds";

/// Header for per-cell sweep results (schema v1).
pub const BENCH_CSV_HEADER: &str = "experiment,aggregator,q,seed,final_error";

/// One [`METRICS_CSV_HEADER`] row, without a trailing newline.
pub fn metrics_row(experiment: &str, row: &RoundMetrics) -> String {
    format!(
        "{experiment},{},{},{},{},{},{}",
        row.round, row.error, row.deviation, row.removals, row.flags, row.seconds
    )
}

/// One [`BENCH_CSV_HEADER`] row, without a trailing newline.
pub fn bench_row(experiment: &str, aggregator: &str, q: usize, seed: u64, final_error: f64) -> String {
    format!("{experiment},{aggregator},{q},{seed},{final_error}")
}
