//! Compressed-column sparse matrices and a left-looking LU factorisation with
//! partial pivoting. One factorisation serves any number of right-hand sides.

use crate::error::{Error, Result};

/// Square sparse matrix stored by columns.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            cols: vec![Vec::new(); n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            cols: (0..n).map(|j| vec![(j, 1.0)]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `value` at `(row, col)`; duplicates are summed at factorisation.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.cols[col].push((row, value));
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                y[i] += v * x[j];
            }
        }
        y
    }

    pub fn factorize(&self) -> Result<LuFactors> {
        LuFactors::new(self)
    }
}

/// `P A = L U` with unit lower `L`. Row indices of `L` are kept in the
/// original numbering; `pivot_row[k]` is the original row chosen at step `k`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    n: usize,
    lower: Vec<Vec<(usize, f64)>>,
    upper: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    pivot_row: Vec<usize>,
}

const PIVOT_FLOOR: f64 = 1e-14;

impl LuFactors {
    fn new(a: &SparseMatrix) -> Result<Self> {
        let n = a.n;
        let mut lower: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut upper: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut pivot_row = Vec::with_capacity(n);
        // step at which an original row was pivoted, usize::MAX if not yet
        let mut pivot_step = vec![usize::MAX; n];
        let mut work = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; n];

        let scale = a
            .cols
            .iter()
            .flatten()
            .fold(0.0_f64, |m, &(_, v)| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);

        for j in 0..n {
            for &(i, v) in &a.cols[j] {
                work[i] += v;
                if !mark[i] {
                    mark[i] = true;
                    touched.push(i);
                }
            }
            // Eliminate with previous columns in pivot order.
            let mut ucol = Vec::new();
            for k in 0..j {
                let r = pivot_row[k];
                let x = work[r];
                if x == 0.0 {
                    continue;
                }
                ucol.push((k, x));
                for &(i, l) in &lower[k] {
                    work[i] -= l * x;
                    if !mark[i] {
                        mark[i] = true;
                        touched.push(i);
                    }
                }
            }
            let mut best: Option<(usize, f64)> = None;
            for &i in &touched {
                if pivot_step[i] != usize::MAX {
                    continue;
                }
                let v = work[i].abs();
                if best.map_or(v > 0.0, |(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            let Some((p, mag)) = best else {
                return Err(Error::SingularSystem { column: j });
            };
            if mag <= PIVOT_FLOOR * scale {
                return Err(Error::SingularSystem { column: j });
            }
            let pivot = work[p];
            pivot_step[p] = j;
            pivot_row.push(p);
            diag.push(pivot);
            let mut lcol = Vec::new();
            for &i in &touched {
                if pivot_step[i] == usize::MAX && work[i] != 0.0 {
                    lcol.push((i, work[i] / pivot));
                }
            }
            for &i in &touched {
                work[i] = 0.0;
                mark[i] = false;
            }
            touched.clear();
            lower.push(lcol);
            upper.push(ucol);
        }
        Ok(Self {
            n,
            lower,
            upper,
            diag,
            pivot_row,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side has the wrong length");
        let mut work = b.to_vec();
        let mut y = vec![0.0; self.n];
        for k in 0..self.n {
            let yk = work[self.pivot_row[k]];
            y[k] = yk;
            if yk != 0.0 {
                for &(i, l) in &self.lower[k] {
                    work[i] -= l * yk;
                }
            }
        }
        for j in (0..self.n).rev() {
            let xj = y[j] / self.diag[j];
            y[j] = xj;
            if xj != 0.0 {
                for &(k, u) in &self.upper[j] {
                    y[k] -= u * xj;
                }
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
        a.mul_vec(x)
            .iter()
            .zip(b)
            .map(|(ax, bi)| (ax - bi).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn needs_pivoting() {
        // [[0, 1], [1, 0]]
        let mut a = SparseMatrix::zeros(2);
        a.add(1, 0, 1.0);
        a.add(0, 1, 1.0);
        let lu = a.factorize().unwrap();
        assert_eq!(lu.solve(&[3.0, 4.0]), vec![4.0, 3.0]);
    }

    #[test]
    fn singular_detected() {
        let mut a = SparseMatrix::zeros(2);
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(0, 1, 2.0);
        a.add(1, 1, 2.0);
        assert!(matches!(a.factorize(), Err(Error::SingularSystem { .. })));
        assert!(SparseMatrix::zeros(1).factorize().is_err());
    }

    #[test]
    fn identity_solves_trivially() {
        let lu = SparseMatrix::identity(3).factorize().unwrap();
        assert_eq!(lu.solve(&[1.0, -2.0, 3.5]), vec![1.0, -2.0, 3.5]);
    }

    proptest! {
        #[test]
        fn random_diagonally_dominant(
            n in 1usize..12,
            entries in proptest::collection::vec((0usize..12, 0usize..12, -1.0f64..1.0), 0..60),
            b in proptest::collection::vec(-5.0f64..5.0, 12),
        ) {
            let mut a = SparseMatrix::zeros(n);
            let mut row_abs = vec![0.0; n];
            for &(i, j, v) in &entries {
                if i < n && j < n && i != j {
                    a.add(i, j, v);
                    row_abs[i] += v.abs();
                }
            }
            for i in 0..n {
                a.add(i, i, row_abs[i] + 0.5);
            }
            let lu = a.factorize().unwrap();
            let x = lu.solve(&b[..n]);
            prop_assert!(dense_residual(&a, &x, &b[..n]) < 1e-10);
        }

        #[test]
        fn random_permuted_matrices(
            n in 2usize..10,
            shift in 1usize..9,
            entries in proptest::collection::vec((0usize..10, 0usize..10, -1.0f64..1.0), 0..30),
        ) {
            // A cyclic permutation with unit entries plus small noise:
            // the diagonal is mostly zero, so pivoting is required.
            let mut a = SparseMatrix::zeros(n);
            for j in 0..n {
                a.add((j + shift) % n, j, 4.0);
            }
            for &(i, j, v) in &entries {
                if i < n && j < n {
                    a.add(i, j, 0.1 * v);
                }
            }
            let b: Vec<f64> = (0..n).map(|i| i as f64 - 1.5).collect();
            let lu = a.factorize().unwrap();
            let x = lu.solve(&b);
            prop_assert!(dense_residual(&a, &x, &b) < 1e-10);
        }
    }
}
