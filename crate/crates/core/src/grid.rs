//! Lattice geometry on the box `[0, N)^2` and the torus `Z^2 / N Z^2`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A vertex of the square lattice.
///
/// Whether it lives in the box or on the torus is decided by the owning
/// structure; torus-tagged points are always stored reduced mod `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: i32,
    pub y: i32,
}

impl GridPoint {
    pub const ORIGIN: GridPoint = GridPoint { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> Self {
        GridPoint { x, y }
    }

    pub fn norm_sq(self) -> i64 {
        let (x, y) = (self.x as i64, self.y as i64);
        x * x + y * y
    }

    pub fn norm(self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// Reduce both coordinates into `[0, n)`.
    pub fn wrap(self, n: usize) -> GridPoint {
        let n = n as i32;
        GridPoint::new(self.x.rem_euclid(n), self.y.rem_euclid(n))
    }

    pub fn offset(self, d: GridPoint) -> GridPoint {
        GridPoint::new(self.x + d.x, self.y + d.y)
    }

    pub fn in_box(self, n: usize) -> bool {
        let n = n as i32;
        (0..n).contains(&self.x) && (0..n).contains(&self.y)
    }
}

impl std::fmt::Display for GridPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Componentwise wrapped displacement, each coordinate in `[0, n/2]`.
fn torus_delta(a: GridPoint, b: GridPoint, n: usize) -> (i64, i64) {
    let n = n as i64;
    let wrap = |d: i64| {
        let d = d.rem_euclid(n);
        d.min(n - d)
    };
    (wrap(a.x as i64 - b.x as i64), wrap(a.y as i64 - b.y as i64))
}

/// Euclidean distance on `Z^2 / N Z^2`, minimised over all lattice representatives.
pub fn torus_distance(a: GridPoint, b: GridPoint, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("torus side length must be positive"));
    }
    let (dx, dy) = torus_delta(a, b, n);
    Ok(((dx * dx + dy * dy) as f64).sqrt())
}

pub(crate) fn torus_distance_sq(a: GridPoint, b: GridPoint, n: usize) -> i64 {
    let (dx, dy) = torus_delta(a, b, n);
    dx * dx + dy * dy
}

/// Distance from a box vertex to the outer boundary `∂V_N`, the set of
/// lattice neighbours of the box that lie outside it.
pub fn box_boundary_distance(p: GridPoint, n: usize) -> f64 {
    let n = n as i32;
    // nearest outside neighbours sit on the lines x = -1, x = n, y = -1, y = n
    let d = (p.x + 1).min(n - p.x).min(p.y + 1).min(n - p.y);
    d as f64
}

/// The open Euclidean ball `B_r = {y in Z^2 : |y| < r}` as a list of offsets,
/// sorted by norm (origin first) and then lexicographically.
#[derive(Debug, Clone)]
pub struct BallOffsets {
    radius: f64,
    offsets: Vec<GridPoint>,
}

impl BallOffsets {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(format!("ball radius must be positive and finite, got {radius}")));
        }
        let reach = radius.ceil() as i32;
        let mut offsets = Vec::new();
        for y in -reach..=reach {
            for x in -reach..=reach {
                let p = GridPoint::new(x, y);
                if (p.norm_sq() as f64) < radius * radius {
                    offsets.push(p);
                }
            }
        }
        offsets.sort_by_key(|p| (p.norm_sq(), p.x, p.y));
        Ok(BallOffsets { radius, offsets })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn offsets(&self) -> &[GridPoint] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn index_of(&self, p: GridPoint) -> Option<usize> {
        self.offsets.iter().position(|&q| q == p)
    }

    /// The ball viewed as a vertex set of the torus of side `n`: offsets
    /// reduced mod `n` with duplicates removed, keeping first occurrence.
    pub fn torus_offsets(&self, n: usize) -> Vec<GridPoint> {
        let mut seen = vec![false; n * n];
        let mut out = Vec::with_capacity(self.offsets.len().min(n * n));
        for &p in &self.offsets {
            let w = p.wrap(n);
            let idx = w.y as usize * n + w.x as usize;
            if !seen[idx] {
                seen[idx] = true;
                out.push(p);
            }
        }
        out
    }
}

/// Index arithmetic on the torus of side `n`, row-major (`index = y * n + x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Torus {
    n: usize,
}

impl Torus {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("torus side length must be positive"));
        }
        if n > u16::MAX as usize {
            return Err(invalid(format!("torus side {n} too large")));
        }
        Ok(Torus { n })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, p: GridPoint) -> usize {
        let w = p.wrap(self.n);
        w.y as usize * self.n + w.x as usize
    }

    pub fn point(&self, idx: usize) -> GridPoint {
        GridPoint::new((idx % self.n) as i32, (idx / self.n) as i32)
    }

    /// Neighbour of `idx` in direction `dir` (0: +x, 1: -x, 2: +y, 3: -y).
    #[inline]
    pub fn step(&self, idx: usize, dir: u32) -> usize {
        let n = self.n;
        let x = idx % n;
        match dir & 3 {
            0 => {
                if x + 1 == n {
                    idx + 1 - n
                } else {
                    idx + 1
                }
            }
            1 => {
                if x == 0 {
                    idx + n - 1
                } else {
                    idx - 1
                }
            }
            2 => {
                let j = idx + n;
                if j >= n * n {
                    j - n * n
                } else {
                    j
                }
            }
            _ => {
                if idx < n {
                    idx + n * n - n
                } else {
                    idx - n
                }
            }
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        (torus_distance_sq(self.point(a), self.point(b), self.n) as f64).sqrt()
    }
}
