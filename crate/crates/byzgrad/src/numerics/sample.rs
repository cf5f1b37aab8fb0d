//! Samplers for the two entry distributions used throughout: standard normal
//! and unit-variance Laplace.
//!
//! The Laplace density here is `(1/sqrt(2)) exp(-sqrt(2) |x|)` per coordinate,
//! i.e. scale `b = 1/sqrt(2)`, so the variance is `2 b^2 = 1` and the tail is
//! `P(|x| >= t) = exp(-sqrt(2) t)`. Matrices are filled column by column, top
//! to bottom; that order is part of the reproducibility contract.

use super::matrix::DenseMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Laplace scale parameter giving unit variance.
pub const LAPLACE_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One standard normal draw.
#[inline]
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One unit-variance Laplace draw via inverse CDF.
#[inline]
pub fn laplace(rng: &mut impl Rng) -> f64 {
    // u in [0, 1); shift to (-1/2, 1/2] and invert the double-exponential CDF.
    let u = rng.random::<f64>() - 0.5;
    let a = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -LAPLACE_SCALE * u.signum() * a.ln()
}

/// d iid standard normal coordinates.
pub fn sample_gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| gaussian(rng)).collect()
}

/// d x m matrix of iid standard normal entries.
pub fn sample_gaussian_matrix(d: usize, m: usize, rng: &mut impl Rng) -> DenseMatrix {
    let mut a = DenseMatrix::zeros(d, m);
    for j in 0..m {
        for i in 0..d {
            a.set(i, j, gaussian(rng));
        }
    }
    a
}

/// d x m matrix of iid unit-variance Laplace entries.
pub fn sample_laplace_matrix(d: usize, m: usize, rng: &mut impl Rng) -> DenseMatrix {
    let mut a = DenseMatrix::zeros(d, m);
    for j in 0..m {
        for i in 0..d {
            a.set(i, j, laplace(rng));
        }
    }
    a
}
