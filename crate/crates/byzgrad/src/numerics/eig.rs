//! Top eigenpair via power iteration, and the spectral norm built on it.
//!
//! Inputs are symmetric positive semidefinite (scatter and Gram matrices), so
//! the power method converges to the largest eigenvalue. Near-degenerate top
//! spectra stall instead of diverging; we restart the iterate with a tiny
//! random perturbation rather than deflating, which keeps the solver
//! allocation-free and has no failure mode beyond "not converged yet".

use super::matrix::{dot, norm2, scale, DenseMatrix, SymmetricMatrix};
use super::rng::RngStream;
use super::sample::sample_gaussian;

#[derive(Debug, Clone, Copy)]
pub struct EigOptions {
    /// Residual tolerance, relative to `max(|lambda|, 1e-12)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions {
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fix the sign of an eigenvector deterministically: the largest-magnitude
/// component (lowest index on ties) is made non-negative. `v` and `-v` span
/// the same eigenspace; a convention keeps downstream output reproducible.
pub fn canonical_sign(v: &mut [f64]) {
    let mut idx = 0;
    let mut best = -1.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        scale(v, -1.0);
    }
}

/// Largest eigenpair of a symmetric PSD matrix by power iteration.
///
/// Returns the best iterate found (smallest residual) with `converged = false`
/// if the tolerance was not met within `max_iter`. The zero matrix yields
/// eigenvalue 0 with the (normalized) start vector.
pub fn top_eigpair(m: &SymmetricMatrix, opts: EigOptions, stream: &RngStream) -> EigPair {
    let n = m.dim();
    assert!(n > 0, "empty matrix");
    let mut rng = stream.rng();
    let mut v = sample_gaussian(n, &mut rng);
    let nv = norm2(&v);
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        scale(&mut v, 1.0 / nv);
    }

    let mut best_res = f64::INFINITY;
    let mut best_pair = (0.0, v.clone());
    let mut last_progress = 0usize;

    for it in 1..=opts.max_iter {
        let w = m.matvec(&v);
        let lambda = dot(&v, &w);
        // residual of (lambda, v) as an eigenpair
        let mut res = 0.0;
        for (wi, vi) in w.iter().zip(&v) {
            let r = wi - lambda * vi;
            res += r * r;
        }
        let res = res.sqrt();
        if res < best_res {
            best_res = res;
            best_pair = (lambda, v.clone());
            last_progress = it;
        }
        if res <= opts.tol * lambda.abs().max(1e-12) {
            let (value, mut vector) = best_pair;
            canonical_sign(&mut vector);
            return EigPair {
                value: value.max(0.0),
                vector,
                iterations: it,
                converged: true,
            };
        }
        let nw = norm2(&w);
        if nw <= f64::MIN_POSITIVE {
            // v is (numerically) in the kernel and the matrix may be zero;
            // lambda = 0 with residual 0 was already handled above, so only a
            // genuine kernel start lands here: restart along a fresh direction.
            v = sample_gaussian(n, &mut rng);
            let nv = norm2(&v).max(f64::MIN_POSITIVE);
            scale(&mut v, 1.0 / nv);
            continue;
        }
        v = w;
        scale(&mut v, 1.0 / nw);
        // Stagnation (e.g. two nearly equal top eigenvalues): nudge the
        // iterate off the invariant subspace and keep going.
        if it - last_progress >= 50 {
            let noise = sample_gaussian(n, &mut rng);
            for (vi, ni) in v.iter_mut().zip(&noise) {
                *vi += 1e-10 * ni;
            }
            let nv = norm2(&v).max(f64::MIN_POSITIVE);
            scale(&mut v, 1.0 / nv);
            last_progress = it;
        }
    }

    let (value, mut vector) = best_pair;
    canonical_sign(&mut vector);
    EigPair {
        value: value.max(0.0),
        vector,
        iterations: opts.max_iter,
        converged: false,
    }
}

/// Largest eigenpair orthogonal to the given directions, by power iteration
/// with the iterate re-orthogonalized every step. With `against` holding the
/// top eigenvector this yields the second eigenpair, and so on; it exposes
/// the near-tied members of a top eigenvalue cluster one at a time.
pub fn deflated_eigpair(
    m: &SymmetricMatrix,
    against: &[Vec<f64>],
    opts: EigOptions,
    stream: &RngStream,
) -> EigPair {
    let n = m.dim();
    if n <= against.len() {
        // the complement is (numerically) empty
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        return EigPair {
            value: 0.0,
            vector: e,
            iterations: 0,
            converged: true,
        };
    }
    let orth = |v: &mut Vec<f64>| {
        for u in against {
            let c = dot(v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= c * ui;
            }
        }
    };
    let mut rng = stream.rng();
    let mut v = sample_gaussian(n, &mut rng);
    orth(&mut v);
    let nv = norm2(&v);
    if nv <= f64::MIN_POSITIVE {
        v = sample_gaussian(n, &mut rng);
        orth(&mut v);
    }
    let nv = norm2(&v).max(f64::MIN_POSITIVE);
    scale(&mut v, 1.0 / nv);

    let mut best_res = f64::INFINITY;
    let mut best_pair = (0.0, v.clone());
    for it in 1..=opts.max_iter {
        let mut w = m.matvec(&v);
        orth(&mut w);
        let lambda = dot(&v, &w);
        let mut res = 0.0;
        for (wi, vi) in w.iter().zip(&v) {
            let r = wi - lambda * vi;
            res += r * r;
        }
        let res = res.sqrt();
        if res < best_res {
            best_res = res;
            best_pair = (lambda, v.clone());
        }
        if res <= opts.tol * lambda.abs().max(1e-12) {
            let (value, mut vector) = best_pair;
            canonical_sign(&mut vector);
            return EigPair {
                value: value.max(0.0),
                vector,
                iterations: it,
                converged: true,
            };
        }
        let nw = norm2(&w);
        if nw <= f64::MIN_POSITIVE {
            v = sample_gaussian(n, &mut rng);
            orth(&mut v);
            let nv = norm2(&v).max(f64::MIN_POSITIVE);
            scale(&mut v, 1.0 / nv);
            continue;
        }
        v = w;
        scale(&mut v, 1.0 / nw);
        orth(&mut v);
        let nv = norm2(&v).max(f64::MIN_POSITIVE);
        scale(&mut v, 1.0 / nv);
    }
    let (value, mut vector) = best_pair;
    canonical_sign(&mut vector);
    EigPair {
        value: value.max(0.0),
        vector,
        iterations: opts.max_iter,
        converged: false,
    }
}

/// Full eigendecomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order with the matching
/// (canonically signed) eigenvectors as columns. Cost grows cubically, so
/// this is for the small ambient-dimension matrices (scatter, certificate
/// mixtures); large Gram matrices stay with power iteration.
pub fn symmetric_eigen(m: &SymmetricMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = m.dim();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-19 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[p][i];
                    let aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for vi in v.iter_mut() {
                    let vip = vi[p];
                    let viq = vi[q];
                    vi[p] = c * vip - s * viq;
                    vi[q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].partial_cmp(&a[x][x]).unwrap());
    let values: Vec<f64> = order.iter().map(|&j| a[j][j]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (col, &j) in order.iter().enumerate() {
        let mut column: Vec<f64> = (0..n).map(|i| v[i][j]).collect();
        canonical_sign(&mut column);
        for (row, &x) in column.iter().enumerate() {
            vectors.set(row, col, x);
        }
    }
    (values, vectors)
}

/// Spectral norm (largest singular value) of a rectangular matrix, computed
/// as the square root of the top eigenvalue of the Gram matrix on the smaller
/// side (the nonzero spectra of A A^T and A^T A coincide).
pub fn spectral_norm(a: &DenseMatrix, opts: EigOptions, stream: &RngStream) -> f64 {
    let gram = if a.rows() <= a.cols() {
        SymmetricMatrix::gram_rows(a)
    } else {
        SymmetricMatrix::gram_cols(a)
    };
    top_eigpair(&gram, opts, stream).value.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample::sample_gaussian;

    /// Independent oracle: cyclic Jacobi eigenvalue iteration for small
    /// symmetric matrices. Returns the full spectrum, descending.
    fn jacobi_eigenvalues(m: &SymmetricMatrix) -> Vec<f64> {
        let n = m.dim();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| m.get(i, j)).collect())
            .collect();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i][j] * a[i][j];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-18 {
                        continue;
                    }
                    let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eigs
    }

    fn stream() -> RngStream {
        RngStream::new(11, 0)
    }

    #[test]
    fn identity_converges_immediately() {
        let mut m = SymmetricMatrix::zeros(4);
        for i in 0..4 {
            m.set(i, i, 1.0);
        }
        let e = top_eigpair(&m, EigOptions::default(), &stream());
        assert!(e.converged);
        assert!((e.value - 1.0).abs() < 1e-12);
        assert_eq!(e.iterations, 1);
    }

    #[test]
    fn diagonal_matrix_top_pair() {
        let mut m = SymmetricMatrix::zeros(2);
        m.set(0, 0, 3.0);
        m.set(1, 1, 1.0);
        let e = top_eigpair(&m, EigOptions::default(), &stream());
        assert!(e.converged);
        assert!((e.value - 3.0).abs() < 1e-9);
        assert!(e.vector[0].abs() > 1.0 - 1e-6);
        assert!(e.vector[1].abs() < 1e-5);
        // canonical sign: dominant component positive
        assert!(e.vector[0] > 0.0);
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let m = SymmetricMatrix::zeros(3);
        let e = top_eigpair(&m, EigOptions::default(), &stream());
        assert_eq!(e.value, 0.0);
        assert!(e.converged);
    }

    #[test]
    fn random_psd_matches_jacobi_oracle() {
        // Oracle computed first over random PSD matrices; the power method
        // must land on its largest value to 1e-8 relative.
        for trial in 0..20u64 {
            let s = RngStream::new(100 + trial, 0);
            let mut rng = s.rng();
            let n = 3 + (trial % 4) as usize;
            let mut m = SymmetricMatrix::zeros(n);
            for _ in 0..(n + 2) {
                let v = sample_gaussian(n, &mut rng);
                m.add_outer(1.0, &v);
            }
            let oracle = jacobi_eigenvalues(&m)[0];
            let e = top_eigpair(&m, EigOptions::default(), &s.child(1));
            assert!(e.converged, "trial {trial} did not converge");
            assert!(
                (e.value - oracle).abs() <= 1e-8 * oracle.max(1.0),
                "trial {trial}: {} vs oracle {oracle}",
                e.value
            );
        }
    }

    #[test]
    fn deflated_pairs_match_jacobi_oracle() {
        for trial in 0..12u64 {
            let s = RngStream::new(700 + trial, 0);
            let mut rng = s.rng();
            let n = 3 + (trial % 4) as usize;
            let mut m = SymmetricMatrix::zeros(n);
            for _ in 0..(n + 3) {
                let v = sample_gaussian(n, &mut rng);
                m.add_outer(1.0, &v);
            }
            let spectrum = jacobi_eigenvalues(&m);
            let top = top_eigpair(&m, EigOptions::default(), &s.child(1));
            let basis = vec![top.vector.clone()];
            let snd = deflated_eigpair(&m, &basis, EigOptions::default(), &s.child(2));
            assert!(
                (snd.value - spectrum[1]).abs() <= 1e-6 * spectrum[0].max(1.0),
                "trial {trial}: {} vs oracle {}",
                snd.value,
                spectrum[1]
            );
            assert!(dot(&snd.vector, &top.vector).abs() < 1e-8);
            let basis2 = vec![top.vector.clone(), snd.vector.clone()];
            let trd = deflated_eigpair(&m, &basis2, EigOptions::default(), &s.child(3));
            assert!(
                (trd.value - spectrum[2]).abs() <= 1e-6 * spectrum[0].max(1.0),
                "trial {trial}: {} vs oracle {}",
                trd.value,
                spectrum[2]
            );
        }
    }

    #[test]
    fn full_decomposition_two_by_two() {
        // [[2, 1], [1, 2]] has eigenvalues 3 and 1 with (1, ±1)/sqrt(2).
        let mut m = SymmetricMatrix::zeros(2);
        m.set(0, 0, 2.0);
        m.set(1, 1, 2.0);
        m.set(0, 1, 1.0);
        let (vals, vecs) = symmetric_eigen(&m);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let r = 0.5_f64.sqrt();
        assert!((vecs.get(0, 0) - r).abs() < 1e-10);
        assert!((vecs.get(1, 0) - r).abs() < 1e-10);
        assert!((vecs.get(0, 1) - r).abs() < 1e-10);
        assert!((vecs.get(1, 1) + r).abs() < 1e-10);
    }

    #[test]
    fn full_decomposition_reconstructs() {
        for trial in 0..8u64 {
            let s = RngStream::new(900 + trial, 0);
            let mut rng = s.rng();
            let n = 2 + (trial % 6) as usize;
            let mut m = SymmetricMatrix::zeros(n);
            for _ in 0..(n + 2) {
                let v = sample_gaussian(n, &mut rng);
                m.add_outer(1.0, &v);
            }
            let (vals, vecs) = symmetric_eigen(&m);
            // descending order
            for w in vals.windows(2) {
                assert!(w[0] >= w[1] - 1e-10);
            }
            // orthonormal columns
            for a in 0..n {
                for b in a..n {
                    let mut dotv = 0.0;
                    for i in 0..n {
                        dotv += vecs.get(i, a) * vecs.get(i, b);
                    }
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((dotv - expect).abs() < 1e-9, "cols {a},{b}: {dotv}");
                }
            }
            // reconstruction V diag(vals) V^T == M
            for i in 0..n {
                for j in 0..n {
                    let mut mij = 0.0;
                    for kcol in 0..n {
                        mij += vals[kcol] * vecs.get(i, kcol) * vecs.get(j, kcol);
                    }
                    assert!((mij - m.get(i, j)).abs() < 1e-8, "entry {i},{j}");
                }
            }
            // top value agrees with the independent power method
            let e = top_eigpair(&m, EigOptions::default(), &s.child(1));
            assert!((vals[0] - e.value).abs() <= 1e-7 * vals[0].max(1.0));
        }
    }

    #[test]
    fn fully_deflated_space_is_zero() {
        let mut m = SymmetricMatrix::zeros(1);
        m.set(0, 0, 3.0);
        let top = top_eigpair(&m, EigOptions::default(), &stream());
        let snd = deflated_eigpair(&m, &[top.vector.clone()], EigOptions::default(), &stream());
        assert_eq!(snd.value, 0.0);
        assert!(snd.converged);
    }

    #[test]
    fn degenerate_top_spectrum_still_converges() {
        // Two equal top eigenvalues: any unit vector in the plane works.
        let mut m = SymmetricMatrix::zeros(3);
        m.set(0, 0, 2.0);
        m.set(1, 1, 2.0);
        m.set(2, 2, 0.5);
        let e = top_eigpair(&m, EigOptions::default(), &stream());
        assert!(e.converged);
        assert!((e.value - 2.0).abs() < 1e-8);
        assert!(e.vector[2].abs() < 1e-4);
    }

    #[test]
    fn eigenvalue_dominates_random_rayleigh_quotients() {
        let s = RngStream::new(7, 3);
        let mut rng = s.rng();
        let mut m = SymmetricMatrix::zeros(5);
        for _ in 0..8 {
            let v = sample_gaussian(5, &mut rng);
            m.add_outer(0.7, &v);
        }
        let e = top_eigpair(&m, EigOptions::default(), &s.child(1));
        for _ in 0..200 {
            let mut x = sample_gaussian(5, &mut rng);
            let n = norm2(&x);
            scale(&mut x, 1.0 / n);
            assert!(m.quadratic_form(&x) <= e.value + 1e-8 * e.value.max(1.0));
        }
    }

    #[test]
    fn rank_one_spectral_norm() {
        // ||u v^T|| = ||u|| ||v||; with ||u|| = 2, ||v|| = 3 the norm is 6.
        let u = [2.0, 0.0];
        let v = [0.0, 3.0, 0.0];
        let cols: Vec<Vec<f64>> = v.iter().map(|&vj| u.iter().map(|&ui| ui * vj).collect()).collect();
        let a = DenseMatrix::from_columns(&cols);
        let n = spectral_norm(&a, EigOptions::default(), &stream());
        assert!((n - 6.0).abs() < 1e-8, "{n}");
    }

    #[test]
    fn spectral_norm_edge_cases() {
        let z = DenseMatrix::zeros(3, 4);
        assert_eq!(spectral_norm(&z, EigOptions::default(), &stream()), 0.0);
        let mut id = DenseMatrix::zeros(3, 3);
        for i in 0..3 {
            id.set(i, i, 1.0);
        }
        let n = spectral_norm(&id, EigOptions::default(), &stream());
        assert!((n - 1.0).abs() < 1e-10);
    }

    #[test]
    fn transpose_invariance() {
        for trial in 0..10u64 {
            let s = RngStream::new(500 + trial, 0);
            let mut rng = s.rng();
            let cols: Vec<Vec<f64>> = (0..7).map(|_| sample_gaussian(4, &mut rng)).collect();
            let a = DenseMatrix::from_columns(&cols);
            // transpose = columns are the rows of a
            let t_cols: Vec<Vec<f64>> = (0..a.rows()).map(|i| a.row(i).to_vec()).collect();
            let at = DenseMatrix::from_columns(&t_cols);
            let na = spectral_norm(&a, EigOptions::default(), &s.child(1));
            let nt = spectral_norm(&at, EigOptions::default(), &s.child(2));
            assert!((na - nt).abs() <= 1e-8 * na.max(1.0), "{na} vs {nt}");
        }
    }
}
