//! Exact sampling of the discrete Gaussian free field on `V_N` with zero
//! boundary conditions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::green::{Domain, GreenSolver, SizeGuard};
use crate::grid::GridPoint;
use crate::linalg::ProfileCholesky;
use crate::rng;
use crate::scales::centering_m;
use crate::spectral;

/// Largest side sampled by triangular factorisation under `Auto`.
pub const CHOLESKY_MAX_SIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    /// `h = C^{-T} ξ` with `I - P = C C^T`.
    Cholesky,
    /// Sine-basis expansion `h = Σ λ^{-1/2} ξ_{jk} φ_j φ_k`.
    Spectral,
}

impl SamplingMethod {
    pub fn auto(n: usize) -> Self {
        if n <= CHOLESKY_MAX_SIDE {
            SamplingMethod::Cholesky
        } else {
            SamplingMethod::Spectral
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            SamplingMethod::Cholesky => 0,
            SamplingMethod::Spectral => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub n: usize,
    pub values: Vec<f64>,
    pub seed: u64,
    pub method: SamplingMethod,
}

impl FieldSample {
    /// Field from explicit row-major values.
    pub fn from_values(n: usize, values: Vec<f64>, seed: u64, method: SamplingMethod) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(invalid(format!("expected {} values for N = {n}, got {}", n * n, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field values must be finite"));
        }
        Ok(FieldSample { n, values, seed, method })
    }

    /// Constant field, mostly for tests and degenerate experiments.
    pub fn constant(n: usize, value: f64) -> Self {
        FieldSample {
            n,
            values: vec![value; n * n],
            seed: 0,
            method: SamplingMethod::Cholesky,
        }
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Value at a box point; coordinates are reduced mod `N`.
    pub fn get(&self, p: GridPoint) -> f64 {
        let w = p.wrap(self.n);
        self.values[w.y as usize * self.n + w.x as usize]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> GridPoint {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        GridPoint::new((i % self.n) as i32, (i / self.n) as i32)
    }
}

type FactorCache = Mutex<HashMap<usize, Arc<ProfileCholesky>>>;

fn factor_cache() -> &'static FactorCache {
    static CACHE: OnceLock<FactorCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cholesky factor of `I - P` on `V_N`, cached per `N`.
pub fn box_factor(n: usize) -> Result<Arc<ProfileCholesky>> {
    if let Some(f) = factor_cache().lock().expect("factor cache poisoned").get(&n) {
        return Ok(Arc::clone(f));
    }
    let solver = GreenSolver::with_guard(Domain::Box { n }, SizeGuard::default())?;
    let f = Arc::new(solver.factor().clone());
    factor_cache()
        .lock()
        .expect("factor cache poisoned")
        .entry(n)
        .or_insert_with(|| Arc::clone(&f));
    Ok(f)
}

/// Sample with the default method for this size.
pub fn sample_field(n: usize, seed: u64) -> Result<FieldSample> {
    sample_field_with(n, seed, SamplingMethod::auto(n))
}

pub fn sample_field_with(n: usize, seed: u64, method: SamplingMethod) -> Result<FieldSample> {
    if n < 2 {
        return Err(invalid(format!("field side must be >= 2, got {n}")));
    }
    let mut rng = rng::stream(seed, rng::tag::FIELD, 0);
    let mut xi: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    match method {
        SamplingMethod::Cholesky => {
            let f = box_factor(n)?;
            f.solve_upper_in_place(&mut xi);
        }
        SamplingMethod::Spectral => spectral::field_from_normals(n, &mut xi),
    }
    Ok(FieldSample {
        n,
        values: xi,
        seed,
        method,
    })
}

/// Real interval with optionally open endpoints; infinite endpoints allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn all() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            lo_closed: false,
            hi_closed: false,
        }
    }

    /// `[v, ∞)`.
    pub fn at_least(v: f64) -> Self {
        Interval {
            lo: v,
            hi: f64::INFINITY,
            lo_closed: true,
            hi_closed: false,
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }
}

/// `Γ_N(A) = { x : h_x - m_N ∈ A }` in row-major order.
pub fn superlevel_set(field: &FieldSample, a: Interval) -> Result<Vec<GridPoint>> {
    let m = centering_m(field.n)?;
    let n = field.n;
    Ok(field
        .values
        .iter()
        .enumerate()
        .filter(|(_, &h)| a.contains(h - m))
        .map(|(i, _)| GridPoint::new((i % n) as i32, (i / n) as i32))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::green_box;

    #[test]
    fn deterministic_given_seed() {
        for method in [SamplingMethod::Cholesky, SamplingMethod::Spectral] {
            let a = sample_field_with(12, 42, method).unwrap();
            let b = sample_field_with(12, 42, method).unwrap();
            assert_eq!(a, b);
            let c = sample_field_with(12, 43, method).unwrap();
            assert_ne!(a.values, c.values);
        }
    }

    #[test]
    fn rejects_tiny_boxes() {
        assert!(sample_field(1, 0).is_err());
        assert!(sample_field(0, 0).is_err());
    }

    #[test]
    fn variance_matches_green_on_two_by_two() {
        let g = green_box(2).unwrap();
        let samples = 20_000;
        for method in [SamplingMethod::Cholesky, SamplingMethod::Spectral] {
            let mut sums = [0.0f64; 4];
            let mut sq = [0.0f64; 4];
            for s in 0..samples {
                let f = sample_field_with(2, s, method).unwrap();
                for i in 0..4 {
                    let v = f.values[i] * f.values[i];
                    sums[i] += v;
                    sq[i] += v * v;
                }
            }
            for i in 0..4 {
                let m = sums[i] / samples as f64;
                let se = ((sq[i] / samples as f64 - m * m) / samples as f64).sqrt();
                assert!((m - g.get(i, i)).abs() < 5.0 * se, "{method:?} vertex {i}: {m} vs {}", g.get(i, i));
            }
        }
    }

    #[test]
    fn superlevel_sets() {
        let f = sample_field(8, 1).unwrap();
        assert_eq!(superlevel_set(&f, Interval::all()).unwrap().len(), 64);
        let m = centering_m(8).unwrap();
        assert!(superlevel_set(&f, Interval::at_least(f.max() - m + 1e-9)).unwrap().is_empty());
        let lo = superlevel_set(&f, Interval::at_least(-1.5)).unwrap();
        let hi = superlevel_set(&f, Interval::at_least(-0.5)).unwrap();
        assert!(hi.iter().all(|p| lo.contains(p)));
        assert!(superlevel_set(&FieldSample::constant(2, 0.0), Interval::all()).is_err());
    }
}
