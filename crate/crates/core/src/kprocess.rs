//! Clock processes, pre-K-processes and the Poisson trapping landscape.
//!
//! All truncated processes here are thinnings of one merged event stream
//! over the full atom list: each event carries a uniform index and a
//! mean-one exponential. A process keeping the first `M` atoms ignores events
//! whose index exceeds `M`. This is the shared-randomness coupling used to
//! compare processes with different truncation levels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::path::{disagreement, PathSample, SpatialPath, SpatialState};
use crate::rng::{self, SimRng};
use crate::scales::ALPHA;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: [f64; 2],
    pub depth: f64,
}

/// Atoms ordered by nonincreasing depth; `cutoff` is the smallest depth a
/// sampler could have kept (0 when the list is exhaustive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomList {
    atoms: Vec<Atom>,
    cutoff: f64,
}

impl AtomList {
    pub fn new(atoms: Vec<Atom>, cutoff: f64) -> Result<Self> {
        for (i, a) in atoms.iter().enumerate() {
            if !(a.depth > 0.0) || !a.depth.is_finite() {
                return Err(invalid(format!("atom {} has non-positive or infinite depth {}", i + 1, a.depth)));
            }
            if a.location.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!("atom {} has a non-finite location", i + 1)));
            }
        }
        if let Some(i) = atoms.windows(2).position(|w| w[1].depth > w[0].depth) {
            return Err(invalid(format!(
                "depths must be descending: atom {} ({}) exceeds atom {} ({})",
                i + 2,
                atoms[i + 1].depth,
                i + 1,
                atoms[i].depth
            )));
        }
        if !(cutoff >= 0.0) {
            return Err(invalid("cutoff must be >= 0"));
        }
        Ok(AtomList { atoms, cutoff })
    }

    /// Depths only, all atoms at the centre of the square.
    pub fn from_depths(depths: &[f64]) -> Result<Self> {
        Self::new(
            depths
                .iter()
                .map(|&depth| Atom {
                    location: [0.5, 0.5],
                    depth,
                })
                .collect(),
            0.0,
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn depths(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.depth).collect()
    }

    pub fn total_depth(&self) -> f64 {
        self.atoms.iter().map(|a| a.depth).sum()
    }

    /// `Σ_{k > m} τ_k`.
    pub fn tail(&self, m: usize) -> f64 {
        self.atoms.iter().skip(m).map(|a| a.depth).sum()
    }

    /// Smallest `M >= 1` with `Σ_{k>M} τ_k <= tol * Σ_k τ_k`.
    pub fn truncation_level(&self, tol: f64) -> Result<usize> {
        if !(tol > 0.0) {
            return Err(invalid(format!("tail tolerance must be positive, got {tol}")));
        }
        if self.atoms.is_empty() {
            return Err(invalid("empty atom list"));
        }
        let total = self.total_depth();
        let mut tail = total;
        for (m, a) in self.atoms.iter().enumerate() {
            tail -= a.depth;
            // recompute exactly near the threshold to avoid cancellation drift
            if tail <= tol * total * (1.0 + 1e-9) && self.tail(m + 1) <= tol * total {
                return Ok(m + 1);
            }
        }
        Ok(self.atoms.len())
    }
}

/// Stand-in for the random measure `Z` on `[0,1]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZKind {
    PointMass { at: [f64; 2] },
    Uniform,
    Discrete { points: Vec<[f64; 2]>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZSpec {
    pub kind: ZKind,
    pub total_mass: f64,
}

impl ZSpec {
    pub fn point_mass(at: [f64; 2], total_mass: f64) -> Self {
        ZSpec {
            kind: ZKind::PointMass { at },
            total_mass,
        }
    }

    pub fn uniform(total_mass: f64) -> Self {
        ZSpec {
            kind: ZKind::Uniform,
            total_mass,
        }
    }

    /// Empirical measure of the given atoms, weighted by depth.
    pub fn from_atoms(atoms: &AtomList, total_mass: f64) -> Self {
        ZSpec {
            kind: ZKind::Discrete {
                points: atoms.atoms().iter().map(|a| a.location).collect(),
                weights: atoms.depths(),
            },
            total_mass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_mass > 0.0) || !self.total_mass.is_finite() {
            return Err(invalid(format!("|Z| must be in (0, ∞), got {}", self.total_mass)));
        }
        if let ZKind::Discrete { points, weights } = &self.kind {
            if points.is_empty() || points.len() != weights.len() {
                return Err(invalid("discrete Z needs matching nonempty points and weights"));
            }
            if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                return Err(invalid("discrete Z weights must be positive and finite"));
            }
        }
        Ok(())
    }

    fn sampler(&self) -> Result<LocationSampler<'_>> {
        self.validate()?;
        Ok(match &self.kind {
            ZKind::PointMass { at } => LocationSampler::Fixed(*at),
            ZKind::Uniform => LocationSampler::Uniform,
            ZKind::Discrete { points, weights } => LocationSampler::Weighted(
                points,
                WeightedIndex::new(weights).map_err(|e| invalid(format!("discrete Z weights: {e}")))?,
            ),
        })
    }
}

enum LocationSampler<'a> {
    Fixed([f64; 2]),
    Uniform,
    Weighted(&'a [[f64; 2]], WeightedIndex<f64>),
}

impl LocationSampler<'_> {
    fn sample(&self, rng: &mut SimRng) -> [f64; 2] {
        match self {
            LocationSampler::Fixed(p) => *p,
            LocationSampler::Uniform => [rng.random(), rng.random()],
            LocationSampler::Weighted(pts, w) => pts[w.sample(rng)],
        }
    }
}

/// Mean number of atoms with depth above `t`: `κ |Z| (β/α) t^{-α/β}`.
pub fn chi_tail_mean(total_mass: f64, beta: f64, kappa: f64, t: f64) -> f64 {
    kappa * total_mass * (beta / ALPHA) * t.powf(-ALPHA / beta)
}

/// Atoms of the Poisson process with intensity `Ẑ(dz) ⊗ κ |Z| t^{-1-α/β} dt`
/// restricted to depths `>= tau_min`.
pub fn sample_chi(z: &ZSpec, beta: f64, kappa: f64, tau_min: f64, seed: u64) -> Result<AtomList> {
    if !(beta > ALPHA) {
        return Err(invalid(format!("β must exceed α = √(2π) ≈ {ALPHA:.6}, got {beta}")));
    }
    if !(tau_min > 0.0) || !tau_min.is_finite() {
        return Err(invalid(format!("tau_min must be positive, got {tau_min}")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(invalid(format!("κ must be positive, got {kappa}")));
    }
    let loc = z.sampler()?;
    let mut rng = rng::stream(seed, rng::tag::CHI, 0);
    let mean = chi_tail_mean(z.total_mass, beta, kappa, tau_min);
    let count = Poisson::new(mean)
        .map_err(|e| invalid(format!("Poisson mean {mean}: {e}")))?
        .sample(&mut rng) as usize;
    let exponent = -beta / ALPHA;
    let mut atoms: Vec<Atom> = (0..count)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            Atom {
                depth: tau_min * u.powf(exponent),
                location: loc.sample(&mut rng),
            }
        })
        .collect();
    atoms.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    AtomList::new(atoms, tau_min)
}

/// `T(u)` and its truncations `T_M(u)` for one realisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockRealization {
    pub u: f64,
    pub total: f64,
    /// `(M, T_M(u))` in the requested order.
    pub truncated: Vec<(usize, f64)>,
}

/// Per-atom contributions `τ_k Σ_{j ≤ A_k(u)} e_j^{(k)}` for several `u`.
/// Each atom owns its own Poisson process and exponentials, so values at
/// different `u` and different truncations share randomness.
fn clock_contributions(atoms: &AtomList, us: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let umax = us.iter().copied().fold(0.0, f64::max);
    atoms
        .atoms()
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let mut rng = rng::stream(seed, rng::tag::CLOCK, k as u64);
            let mut arrivals = Vec::new();
            let mut t = 0.0;
            let mut acc = 0.0;
            loop {
                t += rng.sample::<f64, _>(Exp1);
                if t > umax {
                    break;
                }
                acc += rng.sample::<f64, _>(Exp1);
                arrivals.push((t, acc));
            }
            us.iter()
                .map(|&u| {
                    let i = arrivals.partition_point(|&(s, _)| s <= u);
                    a.depth * i.checked_sub(1).map_or(0.0, |i| arrivals[i].1)
                })
                .collect()
        })
        .collect()
}

/// Evaluate the clock process and its truncations at several times.
pub fn simulate_clock_at(atoms: &AtomList, us: &[f64], ms: &[usize], seed: u64) -> Result<Vec<ClockRealization>> {
    if us.iter().any(|&u| !(u >= 0.0) || !u.is_finite()) {
        return Err(invalid("clock times must be finite and >= 0"));
    }
    let contrib = clock_contributions(atoms, us, seed);
    Ok(us
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let mut prefix = Vec::with_capacity(contrib.len() + 1);
            let mut s = 0.0;
            prefix.push(0.0);
            for c in &contrib {
                s += c[i];
                prefix.push(s);
            }
            ClockRealization {
                u,
                total: s,
                truncated: ms.iter().map(|&m| (m, prefix[m.min(contrib.len())])).collect(),
            }
        })
        .collect())
}

pub fn simulate_clock(atoms: &AtomList, u: f64, ms: &[usize], seed: u64) -> Result<ClockRealization> {
    Ok(simulate_clock_at(atoms, &[u], ms, seed)?.remove(0))
}

/// A K-type path: trap indices (0-based) over time plus the trap locations.
#[derive(Debug, Clone, PartialEq)]
pub struct KPath {
    pub path: PathSample<usize>,
    pub locations: Vec<[f64; 2]>,
}

impl KPath {
    /// Spatial version with states in `[0,1]^2`.
    pub fn spatial(&self) -> PathSample<SpatialState> {
        self.path.map(|&k| SpatialState::Point(self.locations[k]))
    }

    /// Time spent at each trap index.
    pub fn occupation(&self) -> Vec<f64> {
        self.path.occupation(self.locations.len(), |&k| Some(k))
    }

    pub fn horizon(&self) -> f64 {
        self.path.horizon()
    }
}

impl SpatialPath for KPath {
    fn horizon(&self) -> f64 {
        self.path.horizon()
    }
    fn spatial_jumps(&self) -> Box<dyn Iterator<Item = (f64, SpatialState)> + '_> {
        Box::new(
            self.path
                .jumps()
                .iter()
                .map(|&(t, k)| (t, SpatialState::Point(self.locations[k]))),
        )
    }
}

/// The merged event stream: uniform index over all atoms plus an exponential.
struct EventStream {
    rng: SimRng,
    atoms: usize,
}

impl EventStream {
    fn new(seed: u64, atoms: usize) -> Self {
        EventStream {
            rng: rng::stream(seed, rng::tag::PRE_K, 0),
            atoms,
        }
    }

    fn next(&mut self) -> (usize, f64) {
        let k = self.rng.random_range(0..self.atoms);
        let e: f64 = self.rng.sample(Exp1);
        (k, e)
    }
}

fn pre_k_from_stream(atoms: &AtomList, m: usize, horizon: f64, stream: &mut EventStream) -> Result<KPath> {
    let mut path = PathSample::new(horizon)?;
    let mut t = 0.0f64;
    loop {
        let (k, e) = stream.next();
        if k >= m {
            continue;
        }
        path.push(t, k);
        t += atoms.atoms()[k].depth * e;
        if t > horizon {
            break;
        }
    }
    Ok(KPath {
        path,
        locations: atoms.atoms()[..m].iter().map(|a| a.location).collect(),
    })
}

/// Spatial pre-K-process on the `M` deepest atoms up to `horizon`.
pub fn simulate_pre_k(atoms: &AtomList, m: usize, horizon: f64, seed: u64) -> Result<KPath> {
    if m == 0 || m > atoms.len() {
        return Err(invalid(format!("M must be in 1..={}, got {m}", atoms.len())));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon must be positive and finite"));
    }
    pre_k_from_stream(atoms, m, horizon, &mut EventStream::new(seed, atoms.len()))
}

/// Spatial K-process approximated by the pre-K-process at the smallest
/// truncation whose tail mass is within `tail_tolerance` of the total.
pub fn simulate_spatial_k(atoms: &AtomList, horizon: f64, tail_tolerance: f64, seed: u64) -> Result<(KPath, usize)> {
    let m = atoms.truncation_level(tail_tolerance)?;
    Ok((simulate_pre_k(atoms, m, horizon, seed)?, m))
}

/// Measure of `{ t <= horizon : Y(t) != Y_M(t) }` where `Y` uses every atom
/// and `Y_M` the first `M`, both driven by the same event stream.
pub fn truncation_bad_set(atoms: &AtomList, m: usize, horizon: f64, seed: u64) -> Result<f64> {
    if m == 0 || m > atoms.len() {
        return Err(invalid(format!("M must be in 1..={}, got {m}", atoms.len())));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon must be positive and finite"));
    }
    let full = simulate_pre_k(atoms, atoms.len(), horizon, seed)?;
    let trunc = simulate_pre_k(atoms, m, horizon, seed)?;
    Ok(disagreement(&full, &trunc, horizon).min(horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_uniform, ks_test, Estimate};

    fn geometric(n: usize) -> AtomList {
        let atoms = (0..n)
            .map(|k| Atom {
                location: [(k as f64 + 0.5) / n as f64, 0.5],
                depth: 0.5f64.powi(k as i32),
            })
            .collect();
        AtomList::new(atoms, 0.0).unwrap()
    }

    #[test]
    fn atom_list_validation() {
        assert!(AtomList::from_depths(&[1.0, 2.0]).is_err());
        assert!(AtomList::from_depths(&[1.0, 0.0]).is_err());
        assert!(AtomList::from_depths(&[2.0, 2.0, 1.0]).is_ok());
    }

    #[test]
    fn truncation_levels() {
        let a = geometric(20);
        assert_eq!(a.truncation_level(1.0).unwrap(), 1);
        assert!(a.truncation_level(0.0).is_err());
        // Σ_{k>M} 2^{-k} over a finite list of 20 terms, relative to the total
        let total = a.total_depth();
        let m = a.truncation_level(2f64.powi(-10)).unwrap();
        assert!(a.tail(m) <= 2f64.powi(-10) * total);
        assert!(a.tail(m - 1) > 2f64.powi(-10) * total);
        assert_eq!(m, 10);
    }

    #[test]
    fn chi_rejects_bad_parameters() {
        let z = ZSpec::uniform(1.0);
        assert!(sample_chi(&z, ALPHA, 1.0, 0.1, 0).is_err());
        assert!(sample_chi(&z, 2.0 * ALPHA, 1.0, 0.0, 0).is_err());
        let a = sample_chi(&z, 2.0 * ALPHA, 1.0, 0.01, 3).unwrap();
        assert_eq!(a, sample_chi(&z, 2.0 * ALPHA, 1.0, 0.01, 3).unwrap());
        let p = sample_chi(&ZSpec::point_mass([0.3, 0.7], 1.0), 2.0 * ALPHA, 1.0, 0.01, 3).unwrap();
        assert!(p.atoms().iter().all(|a| a.location == [0.3, 0.7]));
    }

    #[test]
    fn clock_basics() {
        let a = geometric(5);
        let c = simulate_clock(&a, 0.0, &[1, 3], 1).unwrap();
        assert_eq!(c.total, 0.0);
        let vals = simulate_clock_at(&a, &[0.5, 1.0, 2.0, 4.0], &[1, 2, 5], 9).unwrap();
        for w in vals.windows(2) {
            assert!(w[1].total >= w[0].total);
        }
        for v in &vals {
            assert!(v.truncated[0].1 <= v.truncated[1].1 && v.truncated[1].1 <= v.total);
            assert_eq!(v.truncated[2].1, v.total);
        }
    }

    #[test]
    fn single_atom_wald() {
        let a = AtomList::from_depths(&[1.0]).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|s| simulate_clock(&a, 3.0, &[], s).unwrap().total).collect();
        assert!(Estimate::from_samples(&xs).within(3.0, 3.0));
    }

    #[test]
    fn pre_k_properties() {
        let a = geometric(4);
        let one = simulate_pre_k(&a, 1, 10.0, 0).unwrap();
        assert!(one.path.jumps().iter().all(|&(_, k)| k == 0));
        assert!(simulate_pre_k(&a, 5, 1.0, 0).is_err());
        let p = simulate_pre_k(&a, 4, 20_000.0, 5).unwrap();
        let mut counts = [0u64; 4];
        for &(_, k) in p.path.jumps() {
            counts[k] += 1;
        }
        assert!(chi_square_uniform(&counts).unwrap().p_value > 0.001);
        let occ = p.occupation();
        let total: f64 = a.total_depth();
        for k in 0..4 {
            let frac = occ[k] / p.horizon();
            assert!((frac - a.atoms()[k].depth / total).abs() < 0.03, "{k}: {frac}");
        }
        // holding times at trap 0 are Exp(mean τ_0 = 1)
        let jumps = p.path.jumps();
        let holds: Vec<f64> = jumps
            .windows(2)
            .filter(|w| w[0].1 == 0)
            .map(|w| w[1].0 - w[0].0)
            .collect();
        assert!(ks_test(&holds, |x| 1.0 - (-x.max(0.0)).exp()).unwrap().p_value > 0.001);
    }

    #[test]
    fn bad_set_bounds() {
        let a = geometric(10);
        assert_eq!(truncation_bad_set(&a, 10, 5.0, 1).unwrap(), 0.0);
        for m in 1..10 {
            let b = truncation_bad_set(&a, m, 5.0, 2).unwrap();
            assert!((0.0..=5.0).contains(&b));
        }
    }
}
