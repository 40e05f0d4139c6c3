//! Envelope (profile) Cholesky factorisation for sparse symmetric positive
//! definite matrices.
//!
//! Row `i` of the lower factor is stored densely from its first structural
//! nonzero column up to the diagonal. Cholesky creates no fill outside this
//! envelope, so lattice operators ordered row-major factor in
//! `O(n * bandwidth^2)` time and `O(n * bandwidth)` memory.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProfileCholesky {
    n: usize,
    first: Vec<usize>,
    row_ptr: Vec<usize>,
    values: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl ProfileCholesky {
    /// Factor the symmetric matrix whose lower triangle is given row by row:
    /// `lower(i)` lists `(j, a_ij)` with `j <= i`; the diagonal must be present.
    pub fn factor<F>(n: usize, mut lower: F) -> Result<Self>
    where
        F: FnMut(usize) -> Vec<(usize, f64)>,
    {
        let mut rows = Vec::with_capacity(n);
        let mut first = Vec::with_capacity(n);
        for i in 0..n {
            let entries = lower(i);
            let f = entries.iter().map(|&(j, _)| j).min().unwrap_or(i).min(i);
            if entries.iter().any(|&(j, _)| j > i) {
                return Err(Error::Internal(format!("row {i} has entries above the diagonal")));
            }
            first.push(f);
            rows.push(entries);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for i in 0..n {
            row_ptr.push(total);
            total += i - first[i] + 1;
        }
        row_ptr.push(total);
        let mut values = vec![0.0; total];
        for (i, entries) in rows.into_iter().enumerate() {
            for (j, v) in entries {
                values[row_ptr[i] + j - first[i]] += v;
            }
        }

        let mut chol = ProfileCholesky { n, first, row_ptr, values };
        chol.factor_in_place()?;
        Ok(chol)
    }

    fn factor_in_place(&mut self) -> Result<()> {
        for i in 0..self.n {
            let fi = self.first[i];
            let (done, rest) = self.values.split_at_mut(self.row_ptr[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let row_j = &done[self.row_ptr[j]..self.row_ptr[j] + (j - fj + 1)];
                let s = dot(&row_i[k0 - fi..j - fi], &row_j[k0 - fj..j - fj]);
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - s) / ljj;
            }
            let off = &row_i[..i - fi];
            let d = row_i[i - fi] - dot(off, off);
            if !(d > 0.0) {
                return Err(Error::Internal(format!(
                    "matrix not positive definite at pivot {i} (pivot value {d})"
                )));
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Solve `C y = b` in place, `C` the lower factor. Leading zeros of `b`
    /// are skipped.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let start = b.iter().position(|&v| v != 0.0).unwrap_or(self.n);
        for i in start..self.n {
            let fi = self.first[i];
            let row = self.row(i);
            let k0 = fi.max(start);
            let s = dot(&row[k0 - fi..i - fi], &b[k0..i]);
            b[i] = (b[i] - s) / row[i - fi];
        }
    }

    /// Solve `C^T x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            let xi = y[i] / row[i - fi];
            y[i] = xi;
            if xi != 0.0 {
                for (yk, lik) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                    *yk -= lik * xi;
                }
            }
        }
    }

    /// Solve `A x = b` where `A = C C^T`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Gaussian elimination with partial pivoting, used as oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn matches_dense_solve_on_banded_spd() {
        let n = 30;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 4.0 + (i % 3) as f64;
            for d in [1usize, 5] {
                if i >= d {
                    let v = -0.7 / d as f64;
                    a[i][i - d] = v;
                    a[i - d][i] = v;
                }
            }
        }
        let chol = ProfileCholesky::factor(n, |i| {
            (0..=i).filter(|&j| a[i][j] != 0.0).map(|j| (j, a[i][j])).collect()
        })
        .unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = chol.solve(&b);
        let oracle = dense_solve(a.clone(), b);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let r = ProfileCholesky::factor(2, |i| if i == 0 { vec![(0, 1.0)] } else { vec![(0, 2.0), (1, 1.0)] });
        assert!(r.is_err());
    }
}
