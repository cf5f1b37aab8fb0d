//! Flat dense matrices for desk-scale linear algebra.
//!
//! Sizes here are hundreds by thousands at most, so everything is plain
//! row-major `Vec<f64>` with explicit loops — easy to audit and fast enough.

/// Row-major dense matrix. Columns are the natural unit for point clouds and
/// gradient reports, so column accessors are provided alongside row slices.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from column vectors (each of length `rows`). Panics on ragged or
    /// non-finite input: both indicate a bug or unvalidated external data.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        assert!(!columns.is_empty(), "matrix needs at least one column");
        let rows = columns[0].len();
        let cols = columns.len();
        let mut m = DenseMatrix::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows, "ragged column {j}");
            for (i, &v) in col.iter().enumerate() {
                assert!(v.is_finite(), "non-finite entry at ({i}, {j})");
                m.data[i * cols + j] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// New matrix keeping only the listed columns, in the given order.
    pub fn select_columns(&self, indices: &[u32]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, indices.len());
        for (jj, &j) in indices.iter().enumerate() {
            let j = j as usize;
            assert!(j < self.cols, "column index {j} out of range");
            for i in 0..self.rows {
                out.data[i * out.cols + jj] = self.get(i, j);
            }
        }
        out
    }

    /// Mean over a subset of columns, folding in the listed order. Callers
    /// that need bit-identical means across code paths share this.
    pub fn column_mean(&self, indices: &[u32]) -> Vec<f64> {
        assert!(!indices.is_empty(), "mean of zero columns");
        let mut acc = vec![0.0; self.rows];
        for &j in indices {
            let j = j as usize;
            for (i, a) in acc.iter_mut().enumerate() {
                *a += self.get(i, j);
            }
        }
        let inv = 1.0 / indices.len() as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
        acc
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            y[i] = s;
        }
        y
    }

    /// y = A^T x
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            let row = self.row(i);
            for (j, &a) in row.iter().enumerate() {
                y[j] += a * xi;
            }
        }
        y
    }
}

/// Symmetric matrix with full storage; constructors enforce symmetry so
/// downstream eigensolvers can assume it.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Wrap a square row-major buffer, checking symmetry to a small absolute
    /// + relative tolerance.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "bad buffer length");
        for i in 0..n {
            for j in (i + 1)..n {
                let a = data[i * n + j];
                let b = data[j * n + i];
                assert!(a.is_finite() && b.is_finite(), "non-finite entry");
                let scale = a.abs().max(b.abs()).max(1.0);
                assert!(
                    (a - b).abs() <= 1e-9 * scale,
                    "asymmetry at ({i},{j}): {a} vs {b}"
                );
            }
        }
        SymmetricMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// self += weight * v v^T
    pub fn add_outer(&mut self, weight: f64, v: &[f64]) {
        assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let wi = weight * v[i];
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += wi * vj;
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            y[i] = s;
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(&self.matvec(x), x)
    }

    /// A A^T (dim = rows of A).
    pub fn gram_rows(a: &DenseMatrix) -> SymmetricMatrix {
        let n = a.rows();
        let mut g = SymmetricMatrix::zeros(n);
        for i in 0..n {
            let ri = a.row(i);
            for j in i..n {
                let rj = a.row(j);
                let mut s = 0.0;
                for (x, y) in ri.iter().zip(rj) {
                    s += x * y;
                }
                g.set(i, j, s);
            }
        }
        g
    }

    /// A^T A (dim = cols of A).
    pub fn gram_cols(a: &DenseMatrix) -> SymmetricMatrix {
        let n = a.cols();
        let mut g = SymmetricMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for r in 0..a.rows() {
                    s += a.get(r, i) * a.get(r, j);
                }
                g.set(i, j, s);
            }
        }
        g
    }
}

/// Plain dot product; hot enough to live here rather than pulling a crate.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(v: &mut [f64], alpha: f64) {
    for x in v.iter_mut() {
        *x *= alpha;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_round_trip() {
        let m = DenseMatrix::from_columns(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), 3);
        assert_eq!(m.column(1), vec![3.0, 4.0]);
        assert_eq!(m.row(0), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn select_and_mean() {
        let m = DenseMatrix::from_columns(&[vec![0.0, 0.0], vec![2.0, 4.0], vec![4.0, 8.0]]);
        let s = m.select_columns(&[2, 0]);
        assert_eq!(s.column(0), vec![4.0, 8.0]);
        assert_eq!(m.column_mean(&[0, 1, 2]), vec![2.0, 4.0]);
    }

    #[test]
    fn matvec_agrees_with_hand_computation() {
        let m = DenseMatrix::from_columns(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(m.matvec(&[2.0, 3.0]), vec![5.0, 3.0]);
        assert_eq!(m.tr_matvec(&[1.0, 1.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn gram_matches_definition() {
        let a = DenseMatrix::from_columns(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        let g = SymmetricMatrix::gram_rows(&a);
        // rows: (1,0) and (2,1)
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(0, 1), 2.0);
        assert_eq!(g.get(1, 1), 5.0);
        let gc = SymmetricMatrix::gram_cols(&a);
        // cols: (1,2) and (0,1)
        assert_eq!(gc.get(0, 0), 5.0);
        assert_eq!(gc.get(0, 1), 2.0);
        assert_eq!(gc.get(1, 1), 1.0);
    }

    #[test]
    #[should_panic(expected = "asymmetry")]
    fn asymmetric_buffer_rejected() {
        SymmetricMatrix::from_dense(2, vec![1.0, 0.5, 0.7, 2.0]);
    }

    #[test]
    fn outer_product_accumulation() {
        let mut s = SymmetricMatrix::zeros(2);
        s.add_outer(2.0, &[1.0, -1.0]);
        assert_eq!(s.get(0, 0), 2.0);
        assert_eq!(s.get(0, 1), -2.0);
        assert_eq!(s.get(1, 1), 2.0);
        assert_eq!(s.quadratic_form(&[1.0, 1.0]), 0.0);
    }
}
