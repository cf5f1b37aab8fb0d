//! Statistical-learning layer: synthetic regression data, per-shard gradient
//! oracles, robust aggregation of worker reports, and the synchronous
//! gradient-descent training loop.
//!
//! The model is distributed full-gradient descent: a learner broadcasts the
//! current parameter vector, each of `m` workers answers with the average
//! gradient over its own shard of the data, and the learner folds the `m`
//! reports into one update direction with a configurable aggregator. The
//! aggregators range from the plain mean (fast, fragile) through classical
//! robust statistics (coordinate-wise median, trimmed mean, geometric median
//! of group means) to the iterative spectral filter from [`crate::filter`].
//!
//! Reports reach the learner through the [`ReportSource`] trait so the same
//! training loop drives both the in-process simulator and the TCP transport.

use std::time::Instant;

use thiserror::Error;

use crate::filter::{robust_mean, FilterConfig, FilterError};
use crate::numerics::{
    axpy, dot, norm2, sub, symmetric_eigen, DenseMatrix, RngStream, SymmetricMatrix,
};
use crate::numerics::sample::gaussian;

/// Errors from dataset construction, aggregation, or the training loop.
#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dataset of {n} points cannot be split into {m} equal shards")]
    ShardMismatch { n: usize, m: usize },
    #[error("shard is empty")]
    EmptyShard,
    #[error("no gradient reports to aggregate")]
    NoReports,
    #[error("trim fraction {0} must lie in [0, 1/2)")]
    BadTrim(f64),
    #[error("trimming {drop} reports per side leaves none of {m}")]
    EmptyAfterTrim { drop: usize, m: usize },
    #[error("{groups} groups requested but only {m} reports")]
    BadGroups { groups: usize, m: usize },
    #[error("step size {0} must be positive and finite")]
    BadEta(f64),
    #[error("round count must be at least 1")]
    BadRounds,
    #[error("projection radius {0} must be positive and finite")]
    BadRadius(f64),
    #[error("auto step size is undefined: covariate second moment is singular")]
    DegenerateCovariates,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("report collection failed: {0}")]
    Collect(#[source] Box<dyn std::error::Error + Send + Sync>),
}

/// A synthetic linear-regression dataset.
///
/// Covariates are stored row-major, one point per row, so a shard's points
/// are contiguous row slices. `theta_star` is the generating parameter; it is
/// carried along purely so experiments can report the true parameter error.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// N x d matrix; row i is the covariate of point i.
    pub covariates: DenseMatrix,
    /// Responses, one per point.
    pub responses: Vec<f64>,
    /// Generating parameter vector.
    pub theta_star: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.covariates.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }
}

/// Draw a linear-regression dataset: covariates `w_i ~ N(0, I_d)` and
/// responses `y_i = <w_i, theta_star> + noise_sd * z_i` with standard normal
/// `z_i`. With `noise_sd = 0` the responses are exact, so the gradient at
/// `theta_star` vanishes identically.
pub fn linreg_generate(
    d: usize,
    n_total: usize,
    theta_star: &[f64],
    noise_sd: f64,
    stream: &RngStream,
) -> Dataset {
    assert!(d >= 1 && n_total >= 1, "need d >= 1 and N >= 1");
    assert_eq!(theta_star.len(), d, "theta_star must have length d");
    assert!(noise_sd >= 0.0 && noise_sd.is_finite());
    let mut rng = stream.rng();
    let mut covariates = DenseMatrix::zeros(n_total, d);
    let mut responses = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let row = covariates.row_mut(i);
        for v in row.iter_mut() {
            *v = gaussian(&mut rng);
        }
        let signal = dot(covariates.row(i), theta_star);
        responses.push(signal + noise_sd * gaussian(&mut rng));
    }
    Dataset {
        covariates,
        responses,
        theta_star: theta_star.to_vec(),
    }
}

/// One worker's slice of the dataset: a contiguous block of point indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub worker: u32,
    pub start: usize,
    pub len: usize,
}

/// Split `n_total` points into `m` equal contiguous shards, one per worker.
/// Errors unless `m` divides `n_total` exactly.
pub fn make_shards(n_total: usize, m: usize) -> Result<Vec<Shard>, LearnError> {
    if m == 0 || n_total % m != 0 {
        return Err(LearnError::ShardMismatch { n: n_total, m });
    }
    let per = n_total / m;
    Ok((0..m)
        .map(|j| Shard {
            worker: j as u32,
            start: j * per,
            len: per,
        })
        .collect())
}

/// Average gradient of the squared-error risk over one shard:
/// `(1/n) * sum_i w_i (<w_i, theta> - y_i)`.
pub fn local_gradient(data: &Dataset, shard: &Shard, theta: &[f64]) -> Result<Vec<f64>, LearnError> {
    if shard.len == 0 {
        return Err(LearnError::EmptyShard);
    }
    if shard.start + shard.len > data.len() {
        return Err(LearnError::Dimension(format!(
            "shard [{}, {}) exceeds dataset of {} points",
            shard.start,
            shard.start + shard.len,
            data.len()
        )));
    }
    if theta.len() != data.dim() {
        return Err(LearnError::Dimension(format!(
            "theta has length {} but covariates have dimension {}",
            theta.len(),
            data.dim()
        )));
    }
    let mut g = vec![0.0; data.dim()];
    for i in shard.start..shard.start + shard.len {
        let w = data.covariates.row(i);
        let err = dot(w, theta) - data.responses[i];
        axpy(&mut g, err, w);
    }
    let inv = 1.0 / shard.len as f64;
    for v in g.iter_mut() {
        *v *= inv;
    }
    Ok(g)
}

/// One round's worth of worker reports, sorted by worker id.
#[derive(Debug, Clone)]
pub struct GradientReport {
    /// d x m matrix; column j is worker j's reported gradient.
    pub gradients: DenseMatrix,
    /// Workers whose report was missing or malformed and replaced by zero.
    pub flagged: Vec<u32>,
    /// Mean of the honest workers' true gradients, when the source knows it
    /// (simulation); used only for the deviation metric.
    pub honest_mean: Option<Vec<f64>>,
}

/// Aggregation rule applied to the sorted report columns.
#[derive(Debug, Clone)]
pub enum Aggregator {
    /// Arithmetic mean of all reports.
    Mean,
    /// Per-coordinate median; for an even count, the average of the two
    /// central order statistics.
    CoordMedian,
    /// Per-coordinate mean after dropping the `ceil(beta * m)` largest and
    /// smallest entries on each side.
    TrimmedMean { beta: f64 },
    /// Weiszfeld geometric median of `groups` group means, the groups being
    /// contiguous blocks of worker ids.
    GeoMedianOfMeans { groups: usize },
    /// Iterative spectral filtering of the reports.
    IterFilter(FilterConfig),
}

/// An aggregated update direction plus how many reports the filter removed
/// (zero for every non-filtering method).
#[derive(Debug, Clone)]
pub struct Aggregated {
    pub value: Vec<f64>,
    pub removals: usize,
}

fn sorted_row(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("gradient entries must be ordered"));
    v
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Weiszfeld iteration for the geometric median, tolerance 1e-9 on the step
/// norm, at most 1000 iterations. When the iterate lands on a data point the
/// update is singular and the point itself is returned.
fn weiszfeld(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut y = vec![0.0; d];
    for p in points {
        axpy(&mut y, 1.0, p);
    }
    for v in y.iter_mut() {
        *v /= points.len() as f64;
    }
    for _ in 0..1000 {
        let mut numer = vec![0.0; d];
        let mut denom = 0.0;
        let mut singular = false;
        for p in points {
            let dist = norm2(&sub(p, &y));
            if dist < 1e-12 {
                singular = true;
                break;
            }
            axpy(&mut numer, 1.0 / dist, p);
            denom += 1.0 / dist;
        }
        if singular {
            break;
        }
        for v in numer.iter_mut() {
            *v /= denom;
        }
        let step = norm2(&sub(&numer, &y));
        y = numer;
        if step <= 1e-9 {
            break;
        }
    }
    y
}

/// Fold a round of reports into one update direction.
///
/// Reports must already be sorted by worker id; every method is then a pure
/// function of the column list. Flagged (zero-filled) reports participate
/// like any other column — robust methods are expected to shrug them off.
pub fn aggregate(reports: &GradientReport, method: &Aggregator) -> Result<Aggregated, LearnError> {
    let m = reports.gradients.cols();
    let d = reports.gradients.rows();
    if m == 0 {
        return Err(LearnError::NoReports);
    }
    let all_ids: Vec<u32> = (0..m as u32).collect();
    match method {
        Aggregator::Mean => Ok(Aggregated {
            value: reports.gradients.column_mean(&all_ids),
            removals: 0,
        }),
        Aggregator::CoordMedian => {
            let mut value = Vec::with_capacity(d);
            for r in 0..d {
                value.push(median_of_sorted(&sorted_row(reports.gradients.row(r))));
            }
            Ok(Aggregated { value, removals: 0 })
        }
        Aggregator::TrimmedMean { beta } => {
            if !(0.0..0.5).contains(beta) || !beta.is_finite() {
                return Err(LearnError::BadTrim(*beta));
            }
            let drop = (beta * m as f64).ceil() as usize;
            if 2 * drop >= m {
                return Err(LearnError::EmptyAfterTrim { drop, m });
            }
            let kept = (m - 2 * drop) as f64;
            let mut value = Vec::with_capacity(d);
            for r in 0..d {
                let row = sorted_row(reports.gradients.row(r));
                value.push(row[drop..m - drop].iter().sum::<f64>() / kept);
            }
            Ok(Aggregated { value, removals: 0 })
        }
        Aggregator::GeoMedianOfMeans { groups } => {
            let k = *groups;
            if k == 0 || k > m {
                return Err(LearnError::BadGroups { groups: k, m });
            }
            let means: Vec<Vec<f64>> = (0..k)
                .map(|j| {
                    let ids: Vec<u32> = (j * m / k..(j + 1) * m / k).map(|i| i as u32).collect();
                    reports.gradients.column_mean(&ids)
                })
                .collect();
            Ok(Aggregated {
                value: weiszfeld(&means),
                removals: 0,
            })
        }
        Aggregator::IterFilter(config) => {
            let out = robust_mean(&reports.gradients, config)?;
            Ok(Aggregated {
                value: out.estimate,
                removals: m - out.active.len(),
            })
        }
    }
}

/// Euclidean ball used for the optional parameter-space projection.
#[derive(Debug, Clone)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

fn project_ball(theta: Vec<f64>, ball: Option<&Ball>) -> Vec<f64> {
    match ball {
        None => theta,
        Some(b) => {
            let offset = sub(&theta, &b.center);
            let dist = norm2(&offset);
            if dist <= b.radius {
                theta
            } else {
                let mut out = b.center.clone();
                axpy(&mut out, b.radius / dist, &offset);
                out
            }
        }
    }
}

fn apply_update(theta: &[f64], direction: &[f64], eta: f64, ball: Option<&Ball>) -> Vec<f64> {
    let mut next = theta.to_vec();
    axpy(&mut next, -eta, direction);
    project_ball(next, ball)
}

/// One synchronous learner step: aggregate the round's reports and take the
/// projected gradient step `theta' = P(theta - eta * G)`.
pub fn learner_round(
    theta: &[f64],
    reports: &GradientReport,
    method: &Aggregator,
    eta: f64,
    projection: Option<&Ball>,
) -> Result<Vec<f64>, LearnError> {
    let agg = aggregate(reports, method)?;
    if agg.value.len() != theta.len() {
        return Err(LearnError::Dimension(format!(
            "aggregate has length {} but theta has length {}",
            agg.value.len(),
            theta.len()
        )));
    }
    Ok(apply_update(theta, &agg.value, eta, projection))
}

/// Anything that can answer a broadcast parameter vector with a round of
/// gradient reports: the in-process simulator or the TCP learner server.
pub trait ReportSource {
    /// Parameter dimension d.
    fn dim(&self) -> usize;
    /// Worker count m.
    fn workers(&self) -> usize;
    /// Collect the round's reports at the broadcast `theta`, sorted by
    /// worker id, zero-filling and flagging anything missing.
    fn collect(&mut self, round: u64, theta: &[f64]) -> Result<GradientReport, LearnError>;
}

/// Training-loop configuration. The step size must be resolved (see
/// [`auto_eta`]) before the loop runs; `radius` switches on projection onto
/// the ball of that radius around the starting point.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub eta: f64,
    pub rounds: usize,
    pub aggregator: Aggregator,
    pub radius: Option<f64>,
    /// True parameter, when known, for the error metric; NaN is reported
    /// otherwise.
    pub theta_star: Option<Vec<f64>>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LearnError::BadEta(self.eta));
        }
        if self.rounds == 0 {
            return Err(LearnError::BadRounds);
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(LearnError::BadRadius(r));
            }
        }
        Ok(())
    }
}

/// Per-round observability record emitted by [`train`].
#[derive(Debug, Clone)]
pub struct RoundMetrics {
    pub round: u64,
    /// Distance to the true parameter after the round's update; NaN when the
    /// truth is unknown.
    pub error: f64,
    /// Distance between the aggregated direction and the honest-mean
    /// gradient; NaN when the source cannot know the honest mean.
    pub deviation: f64,
    /// Reports removed by the filter this round (zero for other methods).
    pub removals: usize,
    /// Reports zero-filled for missing or malformed data.
    pub flags: usize,
    /// Wall-clock seconds spent on the round.
    pub seconds: f64,
}

/// Final parameter plus the per-round metric trajectory.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub theta: Vec<f64>,
    pub metrics: Vec<RoundMetrics>,
}

/// Default step size for linear regression: with (M, L) the smallest and
/// largest eigenvalues of the empirical covariate second moment
/// `(1/N) * sum_i w_i w_i^T`, returns `M / (2 L^2)`. Errors when the moment
/// matrix is singular (then no sensible default exists and the caller must
/// supply a step size).
pub fn auto_eta(data: &Dataset) -> Result<f64, LearnError> {
    let n = data.len();
    if n == 0 {
        return Err(LearnError::DegenerateCovariates);
    }
    let mut moment = SymmetricMatrix::gram_cols(&data.covariates);
    let d = moment.dim();
    let inv = 1.0 / n as f64;
    for i in 0..d {
        for j in i..d {
            moment.set(i, j, moment.get(i, j) * inv);
        }
    }
    let (values, _) = symmetric_eigen(&moment);
    let l = values[0];
    let m = values[d - 1];
    if !(m > 0.0 && l.is_finite()) {
        return Err(LearnError::DegenerateCovariates);
    }
    Ok(m / (2.0 * l * l))
}

/// Run `rounds` synchronous rounds of broadcast / collect / aggregate /
/// update starting from the zero vector. Deterministic whenever the source
/// is; the metric trajectory records everything an experiment sinks to CSV.
pub fn train(
    source: &mut dyn ReportSource,
    config: &TrainConfig,
) -> Result<TrainResult, LearnError> {
    config.validate()?;
    let d = source.dim();
    let theta0 = vec![0.0; d];
    let ball = config.radius.map(|radius| Ball {
        center: theta0.clone(),
        radius,
    });
    if let Some(ts) = &config.theta_star {
        if ts.len() != d {
            return Err(LearnError::Dimension(format!(
                "theta_star has length {} but the source reports dimension {}",
                ts.len(),
                d
            )));
        }
    }
    let mut theta = theta0;
    let mut metrics = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds as u64 {
        let tick = Instant::now();
        let report = source.collect(round, &theta)?;
        if report.gradients.rows() != d || report.gradients.cols() != source.workers() {
            return Err(LearnError::Dimension(format!(
                "round {} reports are {}x{}, expected {}x{}",
                round,
                report.gradients.rows(),
                report.gradients.cols(),
                d,
                source.workers()
            )));
        }
        let agg = aggregate(&report, &config.aggregator)?;
        theta = apply_update(&theta, &agg.value, config.eta, ball.as_ref());
        let error = match &config.theta_star {
            Some(ts) => norm2(&sub(&theta, ts)),
            None => f64::NAN,
        };
        let deviation = match &report.honest_mean {
            Some(h) => norm2(&sub(&agg.value, h)),
            None => f64::NAN,
        };
        metrics.push(RoundMetrics {
            round,
            error,
            deviation,
            removals: agg.removals,
            flags: report.flagged.len(),
            seconds: tick.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainResult { theta, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Termination;
    use crate::numerics::scale;
    use proptest::prelude::*;

    fn report_from_columns(columns: &[Vec<f64>]) -> GradientReport {
        GradientReport {
            gradients: DenseMatrix::from_columns(columns),
            flagged: Vec::new(),
            honest_mean: None,
        }
    }

    /// Honest in-process source: every worker reports its exact shard
    /// gradient.
    struct HonestSource {
        data: Dataset,
        shards: Vec<Shard>,
    }

    impl HonestSource {
        fn new(data: Dataset, m: usize) -> Self {
            let shards = make_shards(data.len(), m).unwrap();
            HonestSource { data, shards }
        }
    }

    impl ReportSource for HonestSource {
        fn dim(&self) -> usize {
            self.data.dim()
        }

        fn workers(&self) -> usize {
            self.shards.len()
        }

        fn collect(&mut self, _round: u64, theta: &[f64]) -> Result<GradientReport, LearnError> {
            let columns: Vec<Vec<f64>> = self
                .shards
                .iter()
                .map(|s| local_gradient(&self.data, s, theta))
                .collect::<Result<_, _>>()?;
            let mut mean = vec![0.0; self.dim()];
            for c in &columns {
                axpy(&mut mean, 1.0, c);
            }
            scale(&mut mean, 1.0 / columns.len() as f64);
            Ok(GradientReport {
                gradients: DenseMatrix::from_columns(&columns),
                flagged: Vec::new(),
                honest_mean: Some(mean),
            })
        }
    }

    #[test]
    fn zero_noise_zero_parameter_means_zero_responses() {
        let data = linreg_generate(3, 17, &[0.0; 3], 0.0, &RngStream::new(1, 0));
        assert!(data.responses.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn response_mean_tracks_covariate_mean() {
        let theta_star = vec![2.0, -1.0, 0.5];
        let noise_sd = 0.3;
        let n = 4000;
        let data = linreg_generate(3, n, &theta_star, noise_sd, &RngStream::new(2, 0));
        let mut w_mean = vec![0.0; 3];
        for i in 0..n {
            axpy(&mut w_mean, 1.0, data.covariates.row(i));
        }
        scale(&mut w_mean, 1.0 / n as f64);
        let y_mean = data.responses.iter().sum::<f64>() / n as f64;
        let slack = 3.0 * noise_sd / (n as f64).sqrt();
        assert!(
            (y_mean - dot(&w_mean, &theta_star)).abs() <= slack,
            "response mean drifted beyond the CLT band"
        );
    }

    #[test]
    fn least_squares_recovers_the_generator() {
        let theta_star = vec![1.5, -2.0, 0.0, 3.0];
        let noise_sd = 0.5;
        let n = 500;
        let data = linreg_generate(4, n, &theta_star, noise_sd, &RngStream::new(3, 0));
        // Independent oracle: solve the normal equations through the
        // eigendecomposition of X^T X and check the 3-sigma standard-error
        // band per coordinate.
        let gram = SymmetricMatrix::gram_cols(&data.covariates);
        let (lambdas, vectors) = symmetric_eigen(&gram);
        let b = data.covariates.tr_matvec(&data.responses);
        let mut theta_hat = vec![0.0; 4];
        for (j, lambda) in lambdas.iter().enumerate() {
            let q = vectors.column(j);
            axpy(&mut theta_hat, dot(&q, &b) / lambda, &q);
        }
        for j in 0..4 {
            let inv_jj: f64 = (0..4)
                .map(|k| {
                    let q = vectors.column(k);
                    q[j] * q[j] / lambdas[k]
                })
                .sum();
            let se = noise_sd * inv_jj.sqrt();
            assert!(
                (theta_hat[j] - theta_star[j]).abs() <= 3.0 * se,
                "coordinate {j} outside the 3-sigma band"
            );
        }
    }

    #[test]
    fn shards_partition_the_dataset() {
        let shards = make_shards(12, 4).unwrap();
        assert_eq!(shards.len(), 4);
        let mut seen = vec![false; 12];
        for (j, s) in shards.iter().enumerate() {
            assert_eq!(s.worker, j as u32);
            assert_eq!(s.len, 3);
            for i in s.start..s.start + s.len {
                assert!(!seen[i], "overlapping shards");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
        assert!(matches!(
            make_shards(10, 4),
            Err(LearnError::ShardMismatch { n: 10, m: 4 })
        ));
    }

    #[test]
    fn gradient_closed_form_single_point() {
        let data = Dataset {
            covariates: DenseMatrix::from_columns(&[vec![1.0], vec![0.0]]),
            responses: vec![2.0],
            theta_star: vec![0.0, 0.0],
        };
        let shard = Shard {
            worker: 0,
            start: 0,
            len: 1,
        };
        let g = local_gradient(&data, &shard, &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![-2.0, 0.0]);
    }

    #[test]
    fn gradient_vanishes_at_the_truth_without_noise() {
        let theta_star = vec![1.0, -3.0, 2.5];
        let data = linreg_generate(3, 24, &theta_star, 0.0, &RngStream::new(4, 0));
        for shard in make_shards(24, 6).unwrap() {
            let g = local_gradient(&data, &shard, &theta_star).unwrap();
            assert!(g.iter().all(|&v| v == 0.0), "gradient should vanish exactly");
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let data = linreg_generate(5, 40, &[0.7, -1.1, 0.3, 2.0, -0.4], 0.8, &RngStream::new(5, 0));
        let shard = Shard {
            worker: 1,
            start: 8,
            len: 8,
        };
        let theta = vec![0.4, 1.0, -0.6, 0.1, 0.9];
        let risk = |t: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in shard.start..shard.start + shard.len {
                let e = dot(data.covariates.row(i), t) - data.responses[i];
                acc += 0.5 * e * e;
            }
            acc / shard.len as f64
        };
        let g = local_gradient(&data, &shard, &theta).unwrap();
        let step = 1e-6;
        for j in 0..5 {
            let mut hi = theta.clone();
            let mut lo = theta.clone();
            hi[j] += step;
            lo[j] -= step;
            let fd = (risk(&hi) - risk(&lo)) / (2.0 * step);
            assert!(
                (fd - g[j]).abs() <= 1e-5 * fd.abs().max(1.0),
                "coordinate {j}: analytic {} vs finite difference {fd}",
                g[j]
            );
        }
    }

    #[test]
    fn identical_reports_fix_every_method() {
        let g = vec![1.0, -2.0, 0.5];
        let reports = report_from_columns(&[g.clone(), g.clone(), g.clone(), g.clone()]);
        let methods = [
            Aggregator::Mean,
            Aggregator::CoordMedian,
            Aggregator::TrimmedMean { beta: 0.25 },
            Aggregator::GeoMedianOfMeans { groups: 2 },
            Aggregator::IterFilter(FilterConfig::default()),
        ];
        for method in methods {
            let out = aggregate(&reports, &method).unwrap();
            for (a, b) in out.value.iter().zip(&g) {
                assert!((a - b).abs() <= 1e-12, "{method:?} moved a fixed point");
            }
        }
    }

    #[test]
    fn coordinate_median_odd_and_even() {
        let odd = report_from_columns(&[vec![0.0], vec![0.0], vec![100.0]]);
        assert_eq!(
            aggregate(&odd, &Aggregator::CoordMedian).unwrap().value,
            vec![0.0]
        );
        let even = report_from_columns(&[vec![0.0], vec![1.0], vec![3.0], vec![7.0]]);
        assert_eq!(
            aggregate(&even, &Aggregator::CoordMedian).unwrap().value,
            vec![2.0]
        );
    }

    #[test]
    fn trimmed_mean_drops_one_per_side() {
        let reports = report_from_columns(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let out = aggregate(&reports, &Aggregator::TrimmedMean { beta: 0.25 }).unwrap();
        assert_eq!(out.value, vec![1.5]);
    }

    #[test]
    fn trimmed_mean_rejects_bad_fractions() {
        let reports = report_from_columns(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            aggregate(&reports, &Aggregator::TrimmedMean { beta: 0.5 }),
            Err(LearnError::BadTrim(_))
        ));
        // One report with any positive trim leaves nothing to average.
        let single = report_from_columns(&[vec![3.0]]);
        assert!(matches!(
            aggregate(&single, &Aggregator::TrimmedMean { beta: 0.25 }),
            Err(LearnError::EmptyAfterTrim { .. })
        ));
    }

    #[test]
    fn geo_median_rejects_too_many_groups() {
        let reports = report_from_columns(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            aggregate(&reports, &Aggregator::GeoMedianOfMeans { groups: 3 }),
            Err(LearnError::BadGroups { groups: 3, m: 2 })
        ));
    }

    #[test]
    fn geo_median_finds_the_symmetric_center() {
        // Rectangle corners: the geometric median is the center by symmetry.
        let reports = report_from_columns(&[
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 2.0],
            vec![2.0, 2.0],
        ]);
        let out = aggregate(&reports, &Aggregator::GeoMedianOfMeans { groups: 4 }).unwrap();
        assert!((out.value[0] - 1.0).abs() <= 1e-6);
        assert!((out.value[1] - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn geo_median_resists_a_far_outlier() {
        // In one dimension the geometric median is the ordinary median.
        let reports = report_from_columns(&[vec![0.0], vec![0.0], vec![100.0]]);
        let out = aggregate(&reports, &Aggregator::GeoMedianOfMeans { groups: 3 }).unwrap();
        assert!(out.value[0].abs() <= 1e-6, "median pulled to {}", out.value[0]);
    }

    #[test]
    fn mean_equals_global_gradient_on_honest_shards() {
        let data = linreg_generate(4, 36, &[1.0, 2.0, -1.0, 0.5], 0.6, &RngStream::new(6, 0));
        let theta = vec![0.3, -0.2, 0.8, 0.0];
        let shards = make_shards(36, 6).unwrap();
        let columns: Vec<Vec<f64>> = shards
            .iter()
            .map(|s| local_gradient(&data, s, &theta).unwrap())
            .collect();
        let out = aggregate(&report_from_columns(&columns), &Aggregator::Mean).unwrap();
        let whole = Shard {
            worker: 0,
            start: 0,
            len: 36,
        };
        let global = local_gradient(&data, &whole, &theta).unwrap();
        for (a, b) in out.value.iter().zip(&global) {
            assert!((a - b).abs() <= 1e-10, "shard-mean gradient drifted");
        }
    }

    #[test]
    fn aggregators_ignore_report_order() {
        let mut rng = RngStream::new(7, 0).rng();
        let columns: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| gaussian(&mut rng)).collect())
            .collect();
        let mut reversed = columns.clone();
        reversed.reverse();
        let fwd = report_from_columns(&columns);
        let rev = report_from_columns(&reversed);
        let methods = [
            Aggregator::Mean,
            Aggregator::CoordMedian,
            Aggregator::TrimmedMean { beta: 0.2 },
            // With one group per worker the grouping is permutation-proof.
            Aggregator::GeoMedianOfMeans { groups: 6 },
            Aggregator::IterFilter(FilterConfig::default()),
        ];
        for method in methods {
            let a = aggregate(&fwd, &method).unwrap().value;
            let b = aggregate(&rev, &method).unwrap().value;
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9, "{method:?} depends on report order");
            }
        }
    }

    #[test]
    fn learner_round_steps_and_projects() {
        let reports = report_from_columns(&[vec![2.0]]);
        let next = learner_round(&[1.0], &reports, &Aggregator::Mean, 0.5, None).unwrap();
        assert_eq!(next, vec![0.0]);

        let zero = report_from_columns(&[vec![0.0, 0.0]]);
        let stay = learner_round(&[0.4, -0.1], &zero, &Aggregator::Mean, 0.7, None).unwrap();
        assert_eq!(stay, vec![0.4, -0.1]);

        // An update landing at (0, 2) projects onto the unit ball at (0, 1).
        let pull = report_from_columns(&[vec![0.0, -2.0]]);
        let ball = Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let projected =
            learner_round(&[0.0, 0.0], &pull, &Aggregator::Mean, 1.0, Some(&ball)).unwrap();
        assert!((projected[0]).abs() <= 1e-15);
        assert!((projected[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn auto_eta_is_positive_and_conservative() {
        let data = linreg_generate(3, 60, &[1.0, 0.0, -1.0], 0.2, &RngStream::new(8, 0));
        let eta = auto_eta(&data).unwrap();
        assert!(eta > 0.0);
        // M <= L forces eta = M / (2 L^2) <= 1 / (2 L) < 1 / L, inside the
        // stable-step region for the quadratic risk.
        let moment = {
            let mut g = SymmetricMatrix::gram_cols(&data.covariates);
            let inv = 1.0 / 60.0;
            for i in 0..3 {
                for j in i..3 {
                    g.set(i, j, g.get(i, j) * inv);
                }
            }
            g
        };
        let top = symmetric_eigen(&moment).0[0];
        assert!(eta <= 1.0 / top);
    }

    #[test]
    fn training_contracts_on_noiseless_regression() {
        let theta_star = vec![2.0, -1.0, 0.5];
        let data = linreg_generate(3, 48, &theta_star, 0.0, &RngStream::new(9, 0));
        let eta = auto_eta(&data).unwrap();
        let mut source = HonestSource::new(data, 4);
        let config = TrainConfig {
            eta,
            rounds: 200,
            aggregator: Aggregator::Mean,
            radius: None,
            theta_star: Some(theta_star.clone()),
        };
        let result = train(&mut source, &config).unwrap();
        let mut prev = norm2(&theta_star);
        let mut converged = false;
        for row in &result.metrics {
            if converged {
                break;
            }
            assert!(
                row.error < prev,
                "round {}: error {} did not contract from {}",
                row.round,
                row.error,
                prev
            );
            assert!(row.deviation.abs() <= 1e-12, "honest mean should be exact");
            prev = row.error;
            if row.error < 1e-8 {
                converged = true;
            }
        }
        assert!(converged, "final error {prev} never reached 1e-8");
    }

    #[test]
    fn filter_and_mean_agree_when_nothing_triggers() {
        let theta_star = vec![1.0, 1.0];
        let data = linreg_generate(2, 40, &theta_star, 0.4, &RngStream::new(10, 0));
        let eta = auto_eta(&data).unwrap();
        let filter_cfg = FilterConfig {
            // A generous scale bound makes the threshold rule accept the
            // benign reports immediately, so the filter is exactly the mean.
            sigma: Some(1e6),
            termination: Termination::SigmaThreshold,
            ..FilterConfig::default()
        };
        let base = TrainConfig {
            eta,
            rounds: 25,
            aggregator: Aggregator::Mean,
            radius: None,
            theta_star: Some(theta_star.clone()),
        };
        let mut src_a = HonestSource::new(data.clone(), 8);
        let mean_run = train(&mut src_a, &base).unwrap();
        let mut src_b = HonestSource::new(data, 8);
        let filt_run = train(
            &mut src_b,
            &TrainConfig {
                aggregator: Aggregator::IterFilter(filter_cfg),
                ..base
            },
        )
        .unwrap();
        for (a, b) in mean_run.metrics.iter().zip(&filt_run.metrics) {
            assert!(
                (a.error - b.error).abs() <= 1e-9,
                "round {}: trajectories split",
                a.round
            );
            assert_eq!(b.removals, 0);
        }
        for (x, y) in mean_run.theta.iter().zip(&filt_run.theta) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn training_config_is_validated() {
        let config = TrainConfig {
            eta: 0.0,
            rounds: 5,
            aggregator: Aggregator::Mean,
            radius: None,
            theta_star: None,
        };
        assert!(matches!(config.validate(), Err(LearnError::BadEta(_))));
        let config = TrainConfig {
            eta: 0.1,
            rounds: 0,
            aggregator: Aggregator::Mean,
            radius: None,
            theta_star: None,
        };
        assert!(matches!(config.validate(), Err(LearnError::BadRounds)));
        let config = TrainConfig {
            eta: 0.1,
            rounds: 1,
            aggregator: Aggregator::Mean,
            radius: Some(-1.0),
            theta_star: None,
        };
        assert!(matches!(config.validate(), Err(LearnError::BadRadius(_))));
    }

    proptest! {
        #[test]
        fn median_and_trim_are_translation_equivariant(
            cols in proptest::collection::vec(
                proptest::collection::vec(-50.0f64..50.0, 3),
                5,
            ),
            shift in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let shifted: Vec<Vec<f64>> = cols
                .iter()
                .map(|c| c.iter().zip(&shift).map(|(a, b)| a + b).collect())
                .collect();
            for method in [
                Aggregator::CoordMedian,
                Aggregator::TrimmedMean { beta: 0.2 },
            ] {
                let base = aggregate(&report_from_columns(&cols), &method).unwrap().value;
                let moved = aggregate(&report_from_columns(&shifted), &method)
                    .unwrap()
                    .value;
                for j in 0..3 {
                    prop_assert!(
                        (moved[j] - (base[j] + shift[j])).abs() <= 1e-9,
                        "{:?} is not translation-equivariant", method
                    );
                }
            }
        }
    }
}
