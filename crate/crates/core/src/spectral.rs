//! Sine-basis diagonalisation of the killed walk on a box.
//!
//! On `V_N` the operator `I - P` is diagonal in the product basis
//! `φ_j(x) φ_k(y)` with `φ_j(x) = sqrt(2/(N+1)) sin(π j (x+1)/(N+1))`
//! and eigenvalue `1 - (cos(π j/(N+1)) + cos(π k/(N+1)))/2`. Transforms are
//! evaluated with a type-I discrete sine transform built on an FFT.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::grid::GridPoint;

/// Unnormalised DST-I of length `n`:
/// `X_k = Σ_j x_j sin(π (j+1)(k+1) / (n+1))`.
pub struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl Dst1 {
    pub fn new(n: usize) -> Self {
        let len = 2 * (n + 1);
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Dst1 {
            n,
            fft,
            scratch,
            buf: vec![Complex64::default(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn transform(&mut self, data: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(data.len(), n);
        self.buf.fill(Complex64::default());
        for (j, &v) in data.iter().enumerate() {
            self.buf[j + 1] = Complex64::new(v, 0.0);
            self.buf[2 * n + 1 - j] = Complex64::new(-v, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (k, out) in data.iter_mut().enumerate() {
            *out = -0.5 * self.buf[k + 1].im;
        }
    }

    /// Apply the transform along both axes of a row-major `n x n` array.
    pub fn transform_2d(&mut self, data: &mut [f64]) {
        let n = self.n;
        for row in data.chunks_exact_mut(n) {
            self.transform(row);
        }
        let mut col = vec![0.0; n];
        for x in 0..n {
            for y in 0..n {
                col[y] = data[y * n + x];
            }
            self.transform(&mut col);
            for y in 0..n {
                data[y * n + x] = col[y];
            }
        }
    }
}

/// Eigenvalue of `I - P` on `V_N` for modes `j, k` in `1..=N`.
pub fn eigenvalue(n: usize, j: usize, k: usize) -> f64 {
    let w = PI / (n + 1) as f64;
    // 1 - (cos a + cos b)/2 = sin^2(a/2) + sin^2(b/2), accurate for small modes
    let a = (0.5 * w * j as f64).sin();
    let b = (0.5 * w * k as f64).sin();
    a * a + b * b
}

/// Normalised eigenfunction value `φ_j(x)`.
pub fn eigenfunction(n: usize, j: usize, x: usize) -> f64 {
    (2.0 / (n + 1) as f64).sqrt() * (PI * (j * (x + 1)) as f64 / (n + 1) as f64).sin()
}

/// `G_{V_N}(a, b)` by direct summation of the eigen-expansion; `O(N^2)`.
pub fn green_box_spectral(n: usize, a: GridPoint, b: GridPoint) -> Result<f64> {
    if n == 0 || !a.in_box(n) || !b.in_box(n) {
        return Err(invalid("points must lie in a nonempty box"));
    }
    let fa: Vec<f64> = (1..=n).map(|j| eigenfunction(n, j, a.x as usize)).collect();
    let ga: Vec<f64> = (1..=n).map(|j| eigenfunction(n, j, a.y as usize)).collect();
    let fb: Vec<f64> = (1..=n).map(|j| eigenfunction(n, j, b.x as usize)).collect();
    let gb: Vec<f64> = (1..=n).map(|j| eigenfunction(n, j, b.y as usize)).collect();
    let mut s = 0.0;
    for k in 0..n {
        let wy = ga[k] * gb[k];
        for j in 0..n {
            s += fa[j] * fb[j] * wy / eigenvalue(n, j + 1, k + 1);
        }
    }
    Ok(s)
}

/// Map i.i.d. standard normals `xi` (row-major over modes) to a field with
/// covariance `(I - P)^{-1}` on `V_N`.
pub fn field_from_normals(n: usize, xi: &mut [f64]) {
    assert_eq!(xi.len(), n * n);
    for k in 0..n {
        for j in 0..n {
            xi[k * n + j] /= eigenvalue(n, j + 1, k + 1).sqrt();
        }
    }
    let mut dst = Dst1::new(n);
    dst.transform_2d(xi);
    let scale = 2.0 / (n + 1) as f64;
    for v in xi.iter_mut() {
        *v *= scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::green_box;

    #[test]
    fn dst_matches_direct_sum() {
        for n in [1usize, 2, 5, 16, 31] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) as f64).cos()).collect();
            let mut y = x.clone();
            Dst1::new(n).transform(&mut y);
            for k in 0..n {
                let direct: f64 = (0..n)
                    .map(|j| x[j] * (PI * ((j + 1) * (k + 1)) as f64 / (n + 1) as f64).sin())
                    .sum();
                assert!((y[k] - direct).abs() < 1e-10, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn spectral_green_matches_factorised_green() {
        let n = 6;
        let table = green_box(n).unwrap();
        for (i, &a) in table.vertices.iter().enumerate().step_by(5) {
            for (j, &b) in table.vertices.iter().enumerate().step_by(3) {
                let s = green_box_spectral(n, a, b).unwrap();
                assert!((s - table.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unit_impulse_reproduces_eigenfunction() {
        let n = 7;
        let (j, k) = (2usize, 5usize);
        let mut xi = vec![0.0; n * n];
        xi[(k - 1) * n + (j - 1)] = 1.0;
        field_from_normals(n, &mut xi);
        let lam = eigenvalue(n, j, k).sqrt();
        for y in 0..n {
            for x in 0..n {
                let want = eigenfunction(n, j, x) * eigenfunction(n, k, y) / lam;
                assert!((xi[y * n + x] - want).abs() < 1e-12);
            }
        }
    }
}
