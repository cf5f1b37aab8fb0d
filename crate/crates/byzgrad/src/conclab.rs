//! Monte-Carlo laboratory for spectral-norm concentration of random
//! matrices with independent heavy-tailed columns.
//!
//! The lab runs a grid of `(d, m)` cells, drawing `d x m` matrices with iid
//! unit-variance Laplace or Gaussian entries, and records the spectral norm
//! of every draw. Per cell it reports the median, p90, and p99 (the median
//! is the central statistic on purpose: the upper tail is the object under
//! study, so the mean would be contaminated by it). Log-log slope fits
//! across the grid expose the growth exponents, and a separate estimator
//! measures the probability of the explicit rare event
//! `{|A_11| >= d and sum_j A_2j^2 >= m/2}`, whose rate has the closed-form
//! floor `(1/2) exp(-sqrt(2) d)`.
//!
//! Everything is deterministic given the grid seed: each `(d, m, trial)`
//! triple owns a derived stream, so results do not depend on thread count
//! or evaluation order.

use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{
    laplace, sample_gaussian_matrix, sample_laplace_matrix, spectral_norm, EigOptions, RngStream,
};

/// Two-sided 95% normal quantile for the binomial interval.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum ConcError {
    #[error("grid needs at least one dimension and one width")]
    EmptyGrid,
    #[error("grid sizes must be positive")]
    ZeroSize,
    #[error("{0} trials per cell; need at least 30 for stable quantiles")]
    TooFewTrials(usize),
    #[error(
        "under-powered: {expected:.1} expected hits at d = {d} with {trials} trials (need >= 100)"
    )]
    UnderPowered { d: usize, trials: usize, expected: f64 },
}

/// Entry distribution for the random matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryDist {
    Laplace,
    Gaussian,
}

impl EntryDist {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntryDist::Laplace => "laplace",
            EntryDist::Gaussian => "gaussian",
        }
    }
}

/// A rectangular experiment grid: every `(d, m)` pair gets `trials` draws.
#[derive(Debug, Clone)]
pub struct TrialGrid {
    pub dims: Vec<usize>,
    pub widths: Vec<usize>,
    pub dist: EntryDist,
    pub trials: usize,
    pub seed: u64,
}

impl TrialGrid {
    pub fn validate(&self) -> Result<(), ConcError> {
        if self.dims.is_empty() || self.widths.is_empty() {
            return Err(ConcError::EmptyGrid);
        }
        if self.dims.iter().chain(&self.widths).any(|&v| v == 0) {
            return Err(ConcError::ZeroSize);
        }
        if self.trials < 30 {
            return Err(ConcError::TooFewTrials(self.trials));
        }
        Ok(())
    }
}

/// One draw's result; the raw material for the trials CSV.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub d: usize,
    pub m: usize,
    pub dist: EntryDist,
    pub trial: usize,
    pub spectral_norm: f64,
}

/// Per-cell quantiles of the spectral norm.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub d: usize,
    pub m: usize,
    pub dist: EntryDist,
    pub median: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Full lab output: every draw plus the quantile table.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub records: Vec<TrialRecord>,
    pub table: Vec<CellSummary>,
}

/// Linear-interpolation quantile of an unsorted sample (the numpy default
/// convention: index `h = (n - 1) q`, interpolate between the neighbors).
pub fn quantile(sample: &[f64], q: f64) -> f64 {
    assert!(!sample.is_empty() && (0.0..=1.0).contains(&q));
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("quantiles need ordered values"));
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }
}

/// Run the whole grid. Trials are parallel across replicates; the merge
/// order is fixed by `(d, m, trial)`, so the output is identical however
/// many threads run.
pub fn spectral_norm_trials(grid: &TrialGrid) -> Result<TrialOutcome, ConcError> {
    grid.validate()?;
    let base = RngStream::new(grid.seed, 0);
    let mut records = Vec::with_capacity(grid.dims.len() * grid.widths.len() * grid.trials);
    let mut table = Vec::with_capacity(grid.dims.len() * grid.widths.len());
    for &d in &grid.dims {
        for &m in &grid.widths {
            let norms: Vec<f64> = (0..grid.trials)
                .into_par_iter()
                .map(|trial| {
                    let cell = base.child_n(&[d as u64, m as u64, trial as u64]);
                    let mut rng = cell.rng();
                    let a = match grid.dist {
                        EntryDist::Laplace => sample_laplace_matrix(d, m, &mut rng),
                        EntryDist::Gaussian => sample_gaussian_matrix(d, m, &mut rng),
                    };
                    spectral_norm(&a, EigOptions::default(), &cell.child(1))
                })
                .collect();
            for (trial, &norm) in norms.iter().enumerate() {
                records.push(TrialRecord {
                    d,
                    m,
                    dist: grid.dist,
                    trial,
                    spectral_norm: norm,
                });
            }
            table.push(CellSummary {
                d,
                m,
                dist: grid.dist,
                median: quantile(&norms, 0.5),
                p90: quantile(&norms, 0.9),
                p99: quantile(&norms, 0.99),
            });
        }
    }
    Ok(TrialOutcome { records, table })
}

/// Least-squares slope of `y` on `x` with its standard error. The error is
/// NaN for two points (no residual degrees of freedom) — reported as-is
/// rather than invented.
pub fn fit_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    assert!(points.len() >= 2, "a slope needs two points");
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - intercept - slope * p.0;
            r * r
        })
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    (slope, stderr)
}

/// One fitted exponent: log-median norm against log of the varying axis,
/// with the other axis fixed.
#[derive(Debug, Clone)]
pub struct SlopeFit {
    /// The fixed axis value (d for per-d fits, m for per-m fits).
    pub fixed: usize,
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Growth exponents across the grid.
#[derive(Debug, Clone)]
pub struct ScalingFit {
    /// Per fixed d: slope of log median norm vs log m.
    pub per_d: Vec<SlopeFit>,
    /// Per fixed m: slope of log median norm vs log d.
    pub per_m: Vec<SlopeFit>,
}

/// Fit log-log growth exponents from a quantile table, restricted to cells
/// with `m >= min_m` (the asymptotic regime; pass 0 to use everything).
pub fn fit_scaling(table: &[CellSummary], min_m: usize) -> ScalingFit {
    let mut dims: Vec<usize> = table.iter().map(|c| c.d).collect();
    dims.sort_unstable();
    dims.dedup();
    let mut widths: Vec<usize> = table.iter().map(|c| c.m).collect();
    widths.sort_unstable();
    widths.dedup();
    let per_d = dims
        .iter()
        .filter_map(|&d| {
            let pts: Vec<(f64, f64)> = table
                .iter()
                .filter(|c| c.d == d && c.m >= min_m)
                .map(|c| ((c.m as f64).ln(), c.median.ln()))
                .collect();
            (pts.len() >= 2).then(|| {
                let (slope, stderr) = fit_slope(&pts);
                SlopeFit {
                    fixed: d,
                    slope,
                    stderr,
                    points: pts.len(),
                }
            })
        })
        .collect();
    let per_m = widths
        .iter()
        .filter(|&&m| m >= min_m)
        .filter_map(|&m| {
            let pts: Vec<(f64, f64)> = table
                .iter()
                .filter(|c| c.m == m)
                .map(|c| ((c.d as f64).ln(), c.median.ln()))
                .collect();
            (pts.len() >= 2).then(|| {
                let (slope, stderr) = fit_slope(&pts);
                SlopeFit {
                    fixed: m,
                    slope,
                    stderr,
                    points: pts.len(),
                }
            })
        })
        .collect();
    ScalingFit { per_d, per_m }
}

/// Estimated rate of the rare event `{|A_11| >= d and sum_j A_2j^2 >= m/2}`
/// for a d x m unit-variance Laplace matrix, with a 95% Wilson interval and
/// the closed-form floor it is measured against.
#[derive(Debug, Clone)]
pub struct EventRate {
    pub d: usize,
    pub m: usize,
    pub trials: usize,
    pub hits: usize,
    pub frequency: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `(1/2) exp(-sqrt(2) d)`.
    pub floor: f64,
    /// Whether the measured frequency clears the floor, CI slack allowed.
    pub holds: bool,
}

pub const EVENT_CSV_HEADER: &str = "d,m,trials,hits,frequency,ci_lo,ci_hi,floor,holds";

impl EventRate {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.d,
            self.m,
            self.trials,
            self.hits,
            self.frequency,
            self.ci_lo,
            self.ci_hi,
            self.floor,
            self.holds
        )
    }
}

/// Measure the rare-event rate by Monte Carlo.
///
/// Only the entries the event reads are sampled — `A_11` and the second row
/// (for d = 1 the two coincide, so the single row is shared). The remaining
/// entries are independent of the event, so dropping them leaves the
/// distribution of the indicator unchanged while making a million trials
/// affordable. The configuration is rejected as under-powered unless the
/// analytic first-event rate `exp(-sqrt(2) d)` predicts at least 100 hits.
pub fn lower_bound_event_rate(
    d: usize,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<EventRate, ConcError> {
    if d == 0 || m == 0 {
        return Err(ConcError::ZeroSize);
    }
    let expected = (-(2.0f64).sqrt() * d as f64).exp() * trials as f64;
    if expected < 100.0 {
        return Err(ConcError::UnderPowered { d, trials, expected });
    }
    let base = RngStream::new(seed, 0);
    let threshold = d as f64;
    let half_m = m as f64 / 2.0;
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = base.child_n(&[3, trial as u64]).rng();
            let a11 = laplace(&mut rng);
            let mut sum = if d == 1 { a11 * a11 } else { 0.0 };
            let row_draws = if d == 1 { m - 1 } else { m };
            for _ in 0..row_draws {
                let x = laplace(&mut rng);
                sum += x * x;
            }
            usize::from(a11.abs() >= threshold && sum >= half_m)
        })
        .sum();
    let n = trials as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + Z95 * Z95 / n;
    let center = (p + Z95 * Z95 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + Z95 * Z95 / (4.0 * n * n)).sqrt() / denom;
    let floor = 0.5 * (-(2.0f64).sqrt() * d as f64).exp();
    Ok(EventRate {
        d,
        m,
        trials,
        hits,
        frequency: p,
        ci_lo: (center - half).max(0.0),
        ci_hi: (center + half).min(1.0),
        floor,
        holds: center + half >= floor,
    })
}

/// CSV header for per-trial records.
pub const TRIALS_CSV_HEADER: &str = "d,m,dist,trial,spectral_norm";

impl TrialRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.d,
            self.m,
            self.dist.as_str(),
            self.trial,
            self.spectral_norm
        )
    }
}

/// CSV header for the quantile table.
pub const SUMMARY_CSV_HEADER: &str = "d,m,dist,median,p90,p99";

impl CellSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.d,
            self.m,
            self.dist.as_str(),
            self.median,
            self.p90,
            self.p99
        )
    }
}

/// CSV header for the fitted exponents.
pub const FIT_CSV_HEADER: &str = "axis,fixed,slope,stderr,points";

impl ScalingFit {
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::with_capacity(self.per_d.len() + self.per_m.len());
        for f in &self.per_d {
            rows.push(format!(
                "m_growth,{},{},{},{}",
                f.fixed, f.slope, f.stderr, f.points
            ));
        }
        for f in &self.per_m {
            rows.push(format!(
                "d_growth,{},{},{},{}",
                f.fixed, f.slope, f.stderr, f.points
            ));
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_domain_is_enforced() {
        let mut grid = TrialGrid {
            dims: vec![2],
            widths: vec![8],
            dist: EntryDist::Laplace,
            trials: 30,
            seed: 1,
        };
        grid.validate().unwrap();
        grid.trials = 29;
        assert!(matches!(grid.validate(), Err(ConcError::TooFewTrials(29))));
        grid.trials = 30;
        grid.widths.clear();
        assert!(matches!(grid.validate(), Err(ConcError::EmptyGrid)));
        grid.widths = vec![0];
        assert!(matches!(grid.validate(), Err(ConcError::ZeroSize)));
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        // h = 3 * 0.9 = 2.7 between 3.0 and 4.0.
        assert!((quantile(&v, 0.9) - 3.7).abs() <= 1e-12);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let grid = TrialGrid {
            dims: vec![2, 3],
            widths: vec![6],
            dist: EntryDist::Gaussian,
            trials: 30,
            seed: 9,
        };
        let a = spectral_norm_trials(&grid).unwrap();
        let b = spectral_norm_trials(&grid).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.spectral_norm.to_bits(), y.spectral_norm.to_bits());
        }
        for (x, y) in a.table.iter().zip(&b.table) {
            assert_eq!(x.median.to_bits(), y.median.to_bits());
        }
    }

    #[test]
    fn table_matches_records() {
        let grid = TrialGrid {
            dims: vec![3],
            widths: vec![10],
            dist: EntryDist::Laplace,
            trials: 31,
            seed: 4,
        };
        let out = spectral_norm_trials(&grid).unwrap();
        let norms: Vec<f64> = out.records.iter().map(|r| r.spectral_norm).collect();
        assert_eq!(norms.len(), 31);
        assert_eq!(out.table.len(), 1);
        assert_eq!(out.table[0].median, quantile(&norms, 0.5));
        assert_eq!(out.table[0].p99, quantile(&norms, 0.99));
    }

    #[test]
    fn single_row_norm_obeys_the_law_of_large_numbers() {
        // d = 1: the spectral norm is the Euclidean norm of one Laplace row,
        // so the median of norm/sqrt(m) sits near 1.
        let grid = TrialGrid {
            dims: vec![1],
            widths: vec![10_000],
            dist: EntryDist::Laplace,
            trials: 30,
            seed: 11,
        };
        let out = spectral_norm_trials(&grid).unwrap();
        let ratio = out.table[0].median / (10_000f64).sqrt();
        assert!(
            (0.9..=1.1).contains(&ratio),
            "median norm ratio {ratio} outside [0.9, 1.1]"
        );
    }

    #[test]
    fn square_gaussian_matrix_sits_at_the_rmt_edge() {
        // For a square Gaussian matrix the norm concentrates near 2 sqrt(m).
        let grid = TrialGrid {
            dims: vec![100],
            widths: vec![100],
            dist: EntryDist::Gaussian,
            trials: 30,
            seed: 12,
        };
        let out = spectral_norm_trials(&grid).unwrap();
        let ratio = out.table[0].median / 10.0;
        assert!(
            (1.9..=2.1).contains(&ratio),
            "median norm ratio {ratio} outside [1.9, 2.1]"
        );
    }

    #[test]
    fn medians_are_monotone_in_m_and_tails_order_across_distributions() {
        let dims = vec![5];
        let widths = vec![20, 80, 320];
        let lap = spectral_norm_trials(&TrialGrid {
            dims: dims.clone(),
            widths: widths.clone(),
            dist: EntryDist::Laplace,
            trials: 40,
            seed: 13,
        })
        .unwrap();
        let gau = spectral_norm_trials(&TrialGrid {
            dims,
            widths,
            dist: EntryDist::Gaussian,
            trials: 40,
            seed: 13,
        })
        .unwrap();
        for pair in lap.table.windows(2) {
            assert!(
                pair[1].median >= pair[0].median,
                "median norm must grow with m"
            );
        }
        for (g, l) in gau.table.iter().zip(&lap.table) {
            assert!(
                g.median < l.p99,
                "Gaussian median {} should sit below Laplace p99 {}",
                g.median,
                l.p99
            );
        }
    }

    #[test]
    fn slope_fit_recovers_an_exact_power_law() {
        let points: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 10_000.0]
            .iter()
            .map(|&x: &f64| (x.ln(), (x.sqrt()).ln()))
            .collect();
        let (slope, stderr) = fit_slope(&points);
        assert!((slope - 0.5).abs() <= 1e-12);
        assert!(stderr.abs() <= 1e-9);
    }

    #[test]
    fn scaling_fit_groups_by_axis() {
        let table = vec![
            CellSummary { d: 2, m: 10, dist: EntryDist::Laplace, median: 10.0, p90: 0.0, p99: 0.0 },
            CellSummary { d: 2, m: 40, dist: EntryDist::Laplace, median: 20.0, p90: 0.0, p99: 0.0 },
            CellSummary { d: 8, m: 10, dist: EntryDist::Laplace, median: 20.0, p90: 0.0, p99: 0.0 },
            CellSummary { d: 8, m: 40, dist: EntryDist::Laplace, median: 40.0, p90: 0.0, p99: 0.0 },
        ];
        let fit = fit_scaling(&table, 0);
        assert_eq!(fit.per_d.len(), 2);
        assert_eq!(fit.per_m.len(), 2);
        // Median quadruples... doubles as m quadruples: slope 1/2 exactly.
        for f in &fit.per_d {
            assert!((f.slope - 0.5).abs() <= 1e-12, "{f:?}");
        }
        // Median doubles as d quadruples: slope 1/2 again.
        for f in &fit.per_m {
            assert!((f.slope - 0.5).abs() <= 1e-12, "{f:?}");
        }
        // Restricting to m >= 40 leaves one point per d: no per-d fit.
        let narrow = fit_scaling(&table, 40);
        assert!(narrow.per_d.is_empty());
        assert_eq!(narrow.per_m.len(), 1);
    }

    #[test]
    fn event_rate_clears_the_floor_at_d1() {
        let rate = lower_bound_event_rate(1, 200, 20_000, 21).unwrap();
        // Analytic first-event rate is exp(-sqrt(2)) ~ 0.243; the floor is
        // half that. The joint frequency must clear the floor outright.
        assert!(rate.holds);
        assert!(
            rate.frequency >= rate.floor,
            "frequency {} below floor {}",
            rate.frequency,
            rate.floor
        );
        assert!(rate.ci_lo <= rate.frequency && rate.frequency <= rate.ci_hi);
    }

    #[test]
    fn event_rate_is_deterministic() {
        let a = lower_bound_event_rate(1, 50, 5_000, 3).unwrap();
        let b = lower_bound_event_rate(1, 50, 5_000, 3).unwrap();
        assert_eq!(a.hits, b.hits);
        assert_eq!(a.frequency.to_bits(), b.frequency.to_bits());
    }

    #[test]
    fn under_powered_configurations_are_rejected() {
        assert!(matches!(
            lower_bound_event_rate(3, 1000, 10, 1),
            Err(ConcError::UnderPowered { d: 3, trials: 10, .. })
        ));
    }

    #[test]
    fn csv_rows_have_the_pinned_shape() {
        let record = TrialRecord {
            d: 2,
            m: 16,
            dist: EntryDist::Laplace,
            trial: 7,
            spectral_norm: 5.25,
        };
        assert_eq!(record.csv_row(), "2,16,laplace,7,5.25");
        assert_eq!(TRIALS_CSV_HEADER.split(',').count(), 5);
        let cell = CellSummary {
            d: 2,
            m: 16,
            dist: EntryDist::Gaussian,
            median: 1.5,
            p90: 2.0,
            p99: 2.5,
        };
        assert_eq!(cell.csv_row(), "2,16,gaussian,1.5,2,2.5");
    }
}
