//! Green functions of the simple random walk killed on exiting a box or a
//! Euclidean ball, computed exactly by sparse Cholesky factorisation of the
//! killed-walk operator `I - P`, plus Monte Carlo estimates of step-limited
//! Green functions on the torus.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridPoint, Torus};
use crate::linalg::ProfileCholesky;
use crate::rng::{self, DirectionSource};
use crate::scales::step_budget;
use crate::stats::Estimate;

/// Largest box side (or ball diameter) factorised without an override.
pub const MAX_FACTOR_SIDE: usize = 512;
/// Largest vertex count for which a dense `n x n` table is materialised.
pub const MAX_DENSE_VERTICES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    /// `V_N = [0, N)^2`.
    Box { n: usize },
    /// Open ball `{ |y| < radius }` around the origin.
    Ball { radius: f64 },
}

impl Domain {
    fn vertices(&self) -> Vec<GridPoint> {
        match *self {
            Domain::Box { n } => (0..n * n)
                .map(|i| GridPoint::new((i % n) as i32, (i / n) as i32))
                .collect(),
            Domain::Ball { radius } => {
                let reach = radius.ceil() as i32;
                let mut v = Vec::new();
                for y in -reach..=reach {
                    for x in -reach..=reach {
                        let p = GridPoint::new(x, y);
                        if (p.norm_sq() as f64) < radius * radius {
                            v.push(p);
                        }
                    }
                }
                v
            }
        }
    }

    fn side(&self) -> usize {
        match *self {
            Domain::Box { n } => n,
            Domain::Ball { radius } => 2 * radius.ceil() as usize + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Domain::Box { n } if n == 0 => Err(invalid("box side must be >= 1")),
            Domain::Ball { radius } if !(radius >= 1.0) || !radius.is_finite() => {
                Err(invalid(format!("ball radius must be >= 1, got {radius}")))
            }
            _ => Ok(()),
        }
    }
}

/// Size limits applied before factorising or materialising a dense table.
#[derive(Debug, Clone, Copy)]
pub struct SizeGuard {
    pub max_side: usize,
    pub max_dense_vertices: usize,
}

impl Default for SizeGuard {
    fn default() -> Self {
        SizeGuard {
            max_side: MAX_FACTOR_SIDE,
            max_dense_vertices: MAX_DENSE_VERTICES,
        }
    }
}

impl SizeGuard {
    pub fn unlimited() -> Self {
        SizeGuard {
            max_side: usize::MAX,
            max_dense_vertices: usize::MAX,
        }
    }
}

const KILLED: u32 = u32::MAX;

/// The killed walk on a finite domain: vertex list and in-domain neighbours.
#[derive(Debug, Clone)]
pub struct KilledWalk {
    domain: Domain,
    vertices: Vec<GridPoint>,
    index: HashMap<GridPoint, u32>,
    neighbours: Vec<[u32; 4]>,
}

impl KilledWalk {
    pub fn new(domain: Domain) -> Result<Self> {
        domain.validate()?;
        let vertices = domain.vertices();
        let index: HashMap<GridPoint, u32> =
            vertices.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
        let dirs = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        let neighbours = vertices
            .iter()
            .map(|&p| {
                let mut nb = [KILLED; 4];
                for (slot, (dx, dy)) in nb.iter_mut().zip(dirs) {
                    if let Some(&j) = index.get(&p.offset(GridPoint::new(dx, dy))) {
                        *slot = j;
                    }
                }
                nb
            })
            .collect();
        Ok(KilledWalk {
            domain,
            vertices,
            index,
            neighbours,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn vertices(&self) -> &[GridPoint] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, p: GridPoint) -> Option<usize> {
        self.index.get(&p).map(|&i| i as usize)
    }

    /// `y = (I - P) x` with `P` the quarter-sum over in-domain neighbours.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.neighbours
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let s: f64 = nb.iter().filter(|&&j| j != KILLED).map(|&j| x[j as usize]).sum();
                x[i] - 0.25 * s
            })
            .collect()
    }

    fn lower_row(&self, i: usize) -> Vec<(usize, f64)> {
        let mut row: Vec<(usize, f64)> = self.neighbours[i]
            .iter()
            .filter(|&&j| j != KILLED && (j as usize) < i)
            .map(|&j| (j as usize, -0.25))
            .collect();
        row.push((i, 1.0));
        row
    }
}

/// Factorised killed-walk operator; columns of its inverse are Green functions.
#[derive(Debug, Clone)]
pub struct GreenSolver {
    walk: KilledWalk,
    factor: ProfileCholesky,
}

impl GreenSolver {
    pub fn new(domain: Domain) -> Result<Self> {
        Self::with_guard(domain, SizeGuard::default())
    }

    pub fn with_guard(domain: Domain, guard: SizeGuard) -> Result<Self> {
        domain.validate()?;
        if domain.side() > guard.max_side {
            return Err(Error::Resource(format!(
                "domain of side {} exceeds the factorisation guard {}; pass an override to proceed",
                domain.side(),
                guard.max_side
            )));
        }
        let walk = KilledWalk::new(domain)?;
        let factor = ProfileCholesky::factor(walk.len(), |i| walk.lower_row(i))?;
        Ok(GreenSolver { walk, factor })
    }

    pub fn walk(&self) -> &KilledWalk {
        &self.walk
    }

    pub fn factor(&self) -> &ProfileCholesky {
        &self.factor
    }

    /// `G(·, source)` as a vector over the domain's vertices.
    pub fn column(&self, source: GridPoint) -> Result<Vec<f64>> {
        let s = self
            .walk
            .index_of(source)
            .ok_or_else(|| invalid(format!("vertex {source} is outside the domain")))?;
        Ok(self.column_at(s))
    }

    pub fn column_at(&self, s: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.walk.len()];
        b[s] = 1.0;
        self.factor.solve_lower_in_place(&mut b);
        self.factor.solve_upper_in_place(&mut b);
        b
    }

    pub fn value(&self, x: GridPoint, y: GridPoint) -> Result<f64> {
        let col = self.column(y)?;
        let i = self
            .walk
            .index_of(x)
            .ok_or_else(|| invalid(format!("vertex {x} is outside the domain")))?;
        Ok(col[i])
    }

    pub fn table(&self, guard: SizeGuard) -> Result<GreenTable> {
        let n = self.walk.len();
        if n > guard.max_dense_vertices {
            return Err(Error::Resource(format!(
                "dense Green table with {n} vertices exceeds the guard of {}",
                guard.max_dense_vertices
            )));
        }
        let mut values = vec![0.0; n * n];
        // column s of G is row s by symmetry of the operator; store as computed
        for s in 0..n {
            let col = self.column_at(s);
            for (i, v) in col.into_iter().enumerate() {
                values[i * n + s] = v;
            }
        }
        Ok(GreenTable {
            domain: self.walk.domain,
            vertices: self.walk.vertices.clone(),
            values,
        })
    }
}

/// Dense Green function table `values[i * n + j] = G(v_i, v_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenTable {
    pub domain: Domain,
    pub vertices: Vec<GridPoint>,
    pub values: Vec<f64>,
}

impl GreenTable {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn index_of(&self, p: GridPoint) -> Option<usize> {
        self.vertices.iter().position(|&q| q == p)
    }

    pub fn value(&self, x: GridPoint, y: GridPoint) -> Option<f64> {
        Some(self.get(self.index_of(x)?, self.index_of(y)?))
    }

    /// `max |G(x,y) - G(y,x)|`.
    pub fn symmetry_error(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `max |(I - P) G - I|` entrywise.
    pub fn residual(&self) -> Result<f64> {
        let walk = KilledWalk::new(self.domain)?;
        if walk.vertices() != self.vertices.as_slice() {
            return Err(Error::Internal("table vertices do not match its domain".into()));
        }
        let n = self.len();
        let mut worst = 0.0f64;
        let mut col = vec![0.0; n];
        for s in 0..n {
            for (i, c) in col.iter_mut().enumerate() {
                *c = self.get(i, s);
            }
            let applied = walk.apply(&col);
            for (i, v) in applied.into_iter().enumerate() {
                let target = if i == s { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        Ok(worst)
    }

    /// Largest violation of `G(x,x) >= G(x,y)`; zero when the maximum principle holds.
    pub fn diagonal_dominance_violation(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let d = self.get(i, i);
            for j in 0..n {
                worst = worst.max(self.get(i, j) - d);
            }
        }
        worst
    }
}

/// Exact `G_{V_N}` as a dense table.
pub fn green_box(n: usize) -> Result<GreenTable> {
    GreenSolver::new(Domain::Box { n })?.table(SizeGuard::default())
}

/// Exact Green function of the walk killed on exiting the open ball `B_R`.
pub fn green_ball(radius: f64) -> Result<GreenTable> {
    GreenSolver::new(Domain::Ball { radius })?.table(SizeGuard::default())
}

/// `G_{V_N}(c, c)` at the box centre `c = (⌊(N-1)/2⌋, ⌊(N-1)/2⌋)`, without
/// building the dense table.
pub fn green_box_center(n: usize) -> Result<f64> {
    let solver = GreenSolver::new(Domain::Box { n })?;
    let c = ((n - 1) / 2) as i32;
    solver.value(GridPoint::new(c, c), GridPoint::new(c, c))
}

/// `G_{B_R}(0, 0)`.
pub fn green_ball_origin(radius: f64) -> Result<f64> {
    let solver = GreenSolver::new(Domain::Ball { radius })?;
    solver.value(GridPoint::ORIGIN, GridPoint::ORIGIN)
}

/// Monte Carlo estimate of `G^N_{ϑ}(0, target)`: the expected number of visits
/// to `target` at steps `0..=ϑ` of the torus walk from the origin, with
/// `ϑ = ϑ_N(budget)`.
pub fn green_torus_steps(
    n: usize,
    budget: u64,
    target: GridPoint,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    if replicas == 0 {
        return Err(invalid("replicas must be positive"));
    }
    let torus = Torus::new(n)?;
    let steps = step_budget(n, budget);
    let tgt = torus.index(target);
    let counts: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut dirs = DirectionSource::new(rng::stream(seed, rng::tag::REPLICA, r as u64));
            let mut pos = torus.index(GridPoint::ORIGIN);
            let mut visits = u64::from(pos == tgt);
            for _ in 0..steps {
                pos = torus.step(pos, dirs.next_dir());
                visits += u64::from(pos == tgt);
            }
            visits as f64
        })
        .collect();
    Ok(Estimate::from_samples(&counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Gaussian elimination on (I - P), independent of the envelope factor.
    fn brute_force_green(domain: Domain) -> (Vec<GridPoint>, Vec<Vec<f64>>) {
        let walk = KilledWalk::new(domain).unwrap();
        let n = walk.len();
        let mut a = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            a[i][i] = 1.0;
            for &j in &walk.neighbours[i] {
                if j != KILLED {
                    a[i][j as usize] -= 0.25;
                }
            }
        }
        // Gauss-Jordan inverse
        let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            inv.swap(c, p);
            let d = a[c][c];
            for k in 0..n {
                a[c][k] /= d;
                inv[c][k] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = a[r][c];
                    for k in 0..n {
                        a[r][k] -= f * a[c][k];
                        inv[r][k] -= f * inv[c][k];
                    }
                }
            }
        }
        (walk.vertices().to_vec(), inv)
    }

    #[test]
    fn single_vertex_box() {
        let t = green_box(1).unwrap();
        assert_eq!(t.len(), 1);
        assert!((t.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn box_three_matches_dense_inverse() {
        let t = green_box(3).unwrap();
        let (verts, inv) = brute_force_green(Domain::Box { n: 3 });
        assert_eq!(verts, t.vertices);
        for i in 0..9 {
            for j in 0..9 {
                assert!((t.get(i, j) - inv[i][j]).abs() < 1e-13);
            }
        }
        let c = t.value(GridPoint::new(1, 1), GridPoint::new(1, 1)).unwrap();
        // frozen from an independent numpy inverse: 1.5 at the 3x3 box centre
        assert!((c - 1.5).abs() < 1e-13, "{c}");
    }

    #[test]
    fn ball_radius_one_and_two() {
        let t1 = green_ball(1.0).unwrap();
        assert_eq!(t1.len(), 1);
        assert!((t1.get(0, 0) - 1.0).abs() < 1e-15);

        let t2 = green_ball(2.0).unwrap();
        assert_eq!(t2.len(), 9);
        let (_, inv) = brute_force_green(Domain::Ball { radius: 2.0 });
        let o = t2.index_of(GridPoint::ORIGIN).unwrap();
        assert!((t2.get(o, o) - inv[o][o]).abs() < 1e-13);
        // B_2 is the 3x3 block around the origin, same value as the 3x3 box centre
        assert!((t2.get(o, o) - 1.5).abs() < 1e-13);
    }

    #[test]
    fn table_invariants_small_boxes() {
        for n in [2usize, 5, 8] {
            let t = green_box(n).unwrap();
            assert!(t.symmetry_error() < 1e-10);
            assert!(t.residual().unwrap() < 1e-8);
            assert!(t.diagonal_dominance_violation() <= 1e-12);
            assert!(t.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn monotone_in_domain() {
        let mut prev = 0.0;
        for n in [3usize, 5, 9, 17, 33] {
            let g = green_box_center(n).unwrap();
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn size_guard() {
        let r = GreenSolver::with_guard(
            Domain::Box { n: 600 },
            SizeGuard::default(),
        );
        assert!(matches!(r, Err(Error::Resource(_))));
        let solver = GreenSolver::new(Domain::Box { n: 70 }).unwrap();
        assert!(matches!(solver.table(SizeGuard::default()), Err(Error::Resource(_))));
        assert!(GreenSolver::new(Domain::Box { n: 0 }).is_err());
        assert!(GreenSolver::new(Domain::Ball { radius: 0.5 }).is_err());
    }

    /// Exact step-limited torus Green function by iterating the distribution.
    fn exact_torus_steps(n: usize, steps: u64, target: GridPoint) -> f64 {
        let torus = Torus::new(n).unwrap();
        let mut p = vec![0.0; n * n];
        p[0] = 1.0;
        let t = torus.index(target);
        let mut total = p[t];
        for _ in 0..steps {
            let mut q = vec![0.0; n * n];
            for (i, &m) in p.iter().enumerate() {
                if m != 0.0 {
                    for d in 0..4 {
                        q[torus.step(i, d)] += 0.25 * m;
                    }
                }
            }
            p = q;
            total += p[t];
        }
        total
    }

    #[test]
    fn torus_steps_zero_budget_is_one() {
        let e = green_torus_steps(10, 0, GridPoint::ORIGIN, 16, 3).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
        assert!(green_torus_steps(10, 1, GridPoint::ORIGIN, 0, 3).is_err());
    }

    #[test]
    fn torus_steps_matches_exact_small_n() {
        let n = 10;
        let exact = exact_torus_steps(n, step_budget(n, 2), GridPoint::ORIGIN);
        let est = green_torus_steps(n, 2, GridPoint::ORIGIN, 4000, 11).unwrap();
        assert!((est.mean - exact).abs() < 4.0 * est.std_error, "{est:?} vs {exact}");
        let off = GridPoint::new(3, 7);
        let exact = exact_torus_steps(n, step_budget(n, 2), off);
        let est = green_torus_steps(n, 2, off, 4000, 12).unwrap();
        assert!((est.mean - exact).abs() < 4.0 * est.std_error, "{est:?} vs {exact}");
    }
}
