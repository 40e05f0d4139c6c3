//! Trapping landscape of a field: `r`-local maxima, depths, the deep traps,
//! separation, Gibbs weights and the mass left outside the trap balls.

use serde::{Deserialize, Serialize};

use crate::dgff::FieldSample;
use crate::error::{invalid, Result};
use crate::grid::{box_boundary_distance, torus_distance_sq, BallOffsets, GridPoint, Torus};
use crate::kprocess::{Atom, AtomList};
use crate::scales::{centering_m, separation_scale};

/// Exponents above this are aggregated in log space.
const EXP_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trap {
    pub position: GridPoint,
    /// `log τ_r(x)`.
    pub log_depth: f64,
    /// 1-based rank by descending depth.
    pub rank: usize,
}

impl Trap {
    /// `τ_r(x)`; `+∞` when not representable (see [`Trap::log_scale`]).
    pub fn depth(&self) -> f64 {
        self.log_depth.exp()
    }

    pub fn log_scale(&self) -> bool {
        self.log_depth > EXP_LIMIT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapLandscape {
    pub n: usize,
    pub r: f64,
    pub m: usize,
    pub beta: f64,
    pub traps: Vec<Trap>,
    pub separated: bool,
    /// Fewer than `m` local maxima exist.
    pub shortfall: bool,
    pub rescaled_atoms: AtomList,
}

impl TrapLandscape {
    pub fn positions(&self) -> Vec<GridPoint> {
        self.traps.iter().map(|t| t.position).collect()
    }

    /// Landscape restricted to its `m` deepest traps.
    pub fn top(&self, m: usize) -> Result<TrapLandscape> {
        if m == 0 {
            return Err(invalid("M must be positive"));
        }
        let k = m.min(self.traps.len());
        let traps = self.traps[..k].to_vec();
        let atoms = AtomList::new(self.rescaled_atoms.atoms()[..k].to_vec(), 0.0)?;
        let mut l = TrapLandscape {
            n: self.n,
            r: self.r,
            m,
            beta: self.beta,
            shortfall: self.traps.len() < m,
            separated: false,
            rescaled_atoms: atoms,
            traps,
        };
        l.separated = is_separated(&l, l.n)?;
        Ok(l)
    }
}

/// Lexicographic (x, then y) tie-break: `true` if `(ha, a)` beats `(hb, b)`.
#[inline]
fn beats(ha: f64, a: GridPoint, hb: f64, b: GridPoint) -> bool {
    ha > hb || (ha == hb && (a.x, a.y) < (b.x, b.y))
}

fn check_radius(r: f64) -> Result<()> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(invalid(format!("radius must be >= 1, got {r}")));
    }
    Ok(())
}

/// `Λ_N(r)`: vertices that beat every other vertex of their torus ball
/// `x + B_r`, in row-major order.
pub fn local_maxima(field: &FieldSample, r: f64) -> Result<Vec<GridPoint>> {
    check_radius(r)?;
    let n = field.n;
    let torus = Torus::new(n)?;
    let ball = BallOffsets::new(r)?;
    let offsets: Vec<GridPoint> = ball.torus_offsets(n).into_iter().filter(|&o| o != GridPoint::ORIGIN).collect();
    let mut out = Vec::new();
    for idx in 0..torus.len() {
        let p = torus.point(idx);
        let h = field.values[idx];
        let is_max = offsets.iter().all(|&o| {
            let q = p.offset(o).wrap(n);
            let hq = field.values[q.y as usize * n + q.x as usize];
            beats(h, p, hq, q)
        });
        if is_max {
            out.push(p);
        }
    }
    Ok(out)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `log τ_r(x) = log Σ_{y ∈ B_r} e^{β h_{x+y}}` on the torus.
pub fn log_trap_depth(field: &FieldSample, x: GridPoint, r: f64, beta: f64) -> Result<f64> {
    check_radius(r)?;
    let ball = BallOffsets::new(r)?;
    let offs = ball.torus_offsets(field.n);
    Ok(log_sum_exp(offs.iter().map(|&o| beta * field.get(x.offset(o)))))
}

/// `τ_r(x)`; `+∞` if it overflows, in which case use [`log_trap_depth`].
pub fn trap_depth(field: &FieldSample, x: GridPoint, r: f64, beta: f64) -> Result<f64> {
    Ok(log_trap_depth(field, x, r, beta)?.exp())
}

/// The `M` deepest `r`-local maxima with separation status and rescaled atoms.
pub fn deep_traps(field: &FieldSample, r: f64, m: usize, beta: f64) -> Result<TrapLandscape> {
    if m == 0 {
        return Err(invalid("M must be positive"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(invalid(format!("β must be finite and >= 0, got {beta}")));
    }
    let n = field.n;
    let m_n = centering_m(n)?;
    let ball = BallOffsets::new(r)?;
    let offs = ball.torus_offsets(n);
    let mut traps: Vec<Trap> = local_maxima(field, r)?
        .into_iter()
        .map(|p| Trap {
            position: p,
            log_depth: log_sum_exp(offs.iter().map(|&o| beta * field.get(p.offset(o)))),
            rank: 0,
        })
        .collect();
    traps.sort_by(|a, b| {
        b.log_depth
            .total_cmp(&a.log_depth)
            .then((a.position.x, a.position.y).cmp(&(b.position.x, b.position.y)))
    });
    let shortfall = traps.len() < m;
    traps.truncate(m);
    for (i, t) in traps.iter_mut().enumerate() {
        t.rank = i + 1;
    }
    let atoms = traps
        .iter()
        .map(|t| Atom {
            location: [t.position.x as f64 / n as f64, t.position.y as f64 / n as f64],
            depth: (t.log_depth - beta * m_n).exp(),
        })
        .collect();
    let mut landscape = TrapLandscape {
        n,
        r,
        m,
        beta,
        traps,
        separated: false,
        shortfall,
        rescaled_atoms: AtomList::new(atoms, 0.0)?,
    };
    landscape.separated = is_separated(&landscape, n)?;
    Ok(landscape)
}

/// Pairwise torus distances `>= r_N` and box-boundary distances `>= r_N`.
pub fn is_separated(landscape: &TrapLandscape, n: usize) -> Result<bool> {
    let r_n = separation_scale(n)?;
    let pos = landscape.positions();
    if pos.iter().any(|&p| box_boundary_distance(p, n) < r_n) {
        return Ok(false);
    }
    for (i, &a) in pos.iter().enumerate() {
        for &b in &pos[..i] {
            if (torus_distance_sq(a, b, n) as f64) < r_n * r_n {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Gibbs weights `e^{β h_x}`, stored as `e^{β h_x - shift}` with `shift = 0`
/// unless the largest exponent would overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsMeasure {
    pub shift: f64,
    pub weights: Vec<f64>,
    pub total: f64,
    pub normalized: Vec<f64>,
}

impl GibbsMeasure {
    /// `log Σ_x e^{β h_x}`.
    pub fn log_total(&self) -> f64 {
        self.shift + self.total.ln()
    }
}

pub fn gibbs_measure(field: &FieldSample, beta: f64) -> GibbsMeasure {
    let top = beta * field.max();
    let shift = if top > EXP_LIMIT { top } else { 0.0 };
    let weights: Vec<f64> = field.values.iter().map(|&h| (beta * h - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    let normalized = weights.iter().map(|w| w / total).collect();
    GibbsMeasure {
        shift,
        weights,
        total,
        normalized,
    }
}

/// Torus mask of `∪_k B_radius(centers_k)`.
pub fn ball_union_mask(n: usize, centers: &[GridPoint], radius: f64) -> Result<Vec<bool>> {
    let torus = Torus::new(n)?;
    let mut mask = vec![false; torus.len()];
    if centers.is_empty() {
        return Ok(mask);
    }
    let offs = BallOffsets::new(radius)?.torus_offsets(n);
    for &c in centers {
        for &o in &offs {
            mask[torus.index(c.offset(o))] = true;
        }
    }
    Ok(mask)
}

/// For each torus vertex, the index of the nearest center among those whose
/// open `radius`-ball contains it (lowest index on ties), or `None`.
pub fn nearest_center_map(n: usize, centers: &[GridPoint], radius: f64) -> Result<Vec<Option<u32>>> {
    let torus = Torus::new(n)?;
    let mut owner: Vec<Option<u32>> = vec![None; torus.len()];
    let mut best = vec![i64::MAX; torus.len()];
    let offs = BallOffsets::new(radius)?.torus_offsets(n);
    for (k, &c) in centers.iter().enumerate() {
        for &o in &offs {
            let idx = torus.index(c.offset(o));
            let d = torus_distance_sq(c, torus.point(idx), n);
            if d < best[idx] {
                best[idx] = d;
                owner[idx] = Some(k as u32);
            }
        }
    }
    Ok(owner)
}

/// `Σ_{x ∉ Λ̄} e^{β(h_x - m_N)}`, with `Λ̄` the union of torus `B_r` balls
/// around the landscape's traps. Terms are summed in row-major order, so the
/// result is exactly nonincreasing as traps are added.
pub fn mass_outside(field: &FieldSample, landscape: &TrapLandscape) -> Result<f64> {
    if field.n != landscape.n {
        return Err(invalid("field and landscape sizes differ"));
    }
    let m_n = centering_m(field.n)?;
    let covered = ball_union_mask(field.n, &landscape.positions(), landscape.r)?;
    let b = landscape.beta;
    Ok(field
        .values
        .iter()
        .zip(&covered)
        .filter(|(_, &c)| !c)
        .map(|(&h, _)| (b * (h - m_n)).exp())
        .sum())
}
