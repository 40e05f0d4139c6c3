//! Piecewise-constant paths, the `d*` metric on `[0,1]^2 ∪ {∞}` and the
//! integrated path distance.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::GridPoint;

/// Right-continuous piecewise-constant path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample<S> {
    jumps: Vec<(f64, S)>,
    horizon: f64,
}

impl<S: Clone> PathSample<S> {
    /// Empty path; `push` the state at time 0 first.
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        Ok(PathSample {
            jumps: Vec::new(),
            horizon,
        })
    }

    pub fn with_capacity(horizon: f64, cap: usize) -> Result<Self> {
        let mut p = Self::new(horizon)?;
        p.jumps.reserve(cap);
        Ok(p)
    }

    /// Validated path from explicit jumps.
    pub fn from_jumps(jumps: Vec<(f64, S)>, horizon: f64) -> Result<Self> {
        let p = PathSample { jumps, horizon };
        p.validate()?;
        Ok(p)
    }

    pub fn constant(state: S, horizon: f64) -> Result<Self> {
        Self::from_jumps(vec![(0.0, state)], horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon must be finite and >= 0"));
        }
        if let Some(&(t0, _)) = self.jumps.first() {
            if t0 != 0.0 {
                return Err(invalid(format!("first jump must be at time 0, got {t0}")));
            }
        } else if self.horizon > 0.0 {
            return Err(invalid("a path with positive horizon needs a state at time 0"));
        }
        for w in self.jumps.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(invalid(format!("jump times not strictly increasing at {}", w[1].0)));
            }
        }
        if let Some(&(t, _)) = self.jumps.last() {
            if t > self.horizon {
                return Err(invalid(format!("jump at {t} beyond horizon {}", self.horizon)));
            }
        }
        Ok(())
    }

    /// Append a jump. A jump at the time of the previous one replaces it
    /// (the earlier state held for zero time).
    pub fn push(&mut self, t: f64, state: S) {
        match self.jumps.last_mut() {
            Some(last) if last.0 >= t => last.1 = state,
            _ => self.jumps.push((t, state)),
        }
    }

    pub fn jumps(&self) -> &[(f64, S)] {
        &self.jumps
    }

    pub fn into_jumps(self) -> Vec<(f64, S)> {
        self.jumps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    pub fn set_horizon(&mut self, horizon: f64) -> Result<()> {
        if self.jumps.last().is_some_and(|&(t, _)| t > horizon) {
            return Err(invalid("new horizon precedes the last jump"));
        }
        self.horizon = horizon;
        Ok(())
    }

    /// Restrict to `[0, horizon]`.
    pub fn truncated(&self, horizon: f64) -> Result<Self> {
        if horizon > self.horizon {
            return Err(invalid(format!(
                "cannot extend path defined up to {} to {horizon}",
                self.horizon
            )));
        }
        let end = self.jumps.partition_point(|&(t, _)| t <= horizon);
        Ok(PathSample {
            jumps: self.jumps[..end].to_vec(),
            horizon,
        })
    }

    pub fn state_at(&self, t: f64) -> Option<&S> {
        if t < 0.0 || t > self.horizon {
            return None;
        }
        let i = self.jumps.partition_point(|&(s, _)| s <= t);
        i.checked_sub(1).map(|i| &self.jumps[i].1)
    }

    pub fn map<T, F: FnMut(&S) -> T>(&self, mut f: F) -> PathSample<T> {
        PathSample {
            jumps: self.jumps.iter().map(|(t, s)| (*t, f(s))).collect(),
            horizon: self.horizon,
        }
    }

    /// `(start, end, state)` for every piece inside `[0, horizon]`.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, &S)> + '_ {
        let h = self.horizon;
        self.jumps.iter().enumerate().map(move |(i, (t, s))| {
            let end = self.jumps.get(i + 1).map_or(h, |n| n.0);
            (*t, end, s)
        })
    }

    /// Total time spent in states mapped to each category by `class`.
    pub fn occupation<F: Fn(&S) -> Option<usize>>(&self, categories: usize, class: F) -> Vec<f64> {
        let mut occ = vec![0.0; categories];
        for (a, b, s) in self.pieces() {
            if let Some(c) = class(s) {
                occ[c] += b - a;
            }
        }
        occ
    }
}

/// A point of `V* = [0,1]^2 ∪ {∞}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpatialState {
    Point([f64; 2]),
    Infinity,
}

/// Metric on `V*`: Euclidean on the square, `∞` at distance 1 from every point.
pub fn dstar(a: SpatialState, b: SpatialState) -> f64 {
    match (a, b) {
        (SpatialState::Point(p), SpatialState::Point(q)) => (p[0] - q[0]).hypot(p[1] - q[1]),
        (SpatialState::Infinity, SpatialState::Infinity) => 0.0,
        _ => 1.0,
    }
}

/// Anything that can enumerate its jumps into `V*` on `[0, horizon]`.
pub trait SpatialPath {
    fn horizon(&self) -> f64;
    fn spatial_jumps(&self) -> Box<dyn Iterator<Item = (f64, SpatialState)> + '_>;
}

impl SpatialPath for PathSample<SpatialState> {
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn spatial_jumps(&self) -> Box<dyn Iterator<Item = (f64, SpatialState)> + '_> {
        Box::new(self.jumps.iter().copied())
    }
}

/// Integrate `d(f(s), g(s))` over `[0, horizon]` on the merged jump partition.
pub fn integrate_pair<A, B, D>(f: A, g: B, horizon: f64, mut d: D) -> f64
where
    A: IntoIterator<Item = (f64, SpatialState)>,
    B: IntoIterator<Item = (f64, SpatialState)>,
    D: FnMut(SpatialState, SpatialState) -> f64,
{
    let mut fi = f.into_iter().peekable();
    let mut gi = g.into_iter().peekable();
    let (Some((_, mut sf)), Some((_, mut sg))) = (fi.next(), gi.next()) else {
        return 0.0;
    };
    let mut t = 0.0f64;
    let mut total = 0.0;
    loop {
        let nf = fi.peek().map_or(f64::INFINITY, |j| j.0);
        let ng = gi.peek().map_or(f64::INFINITY, |j| j.0);
        let next = nf.min(ng).min(horizon);
        if next > t {
            total += (next - t) * d(sf, sg);
            t = next;
        }
        if t >= horizon {
            break;
        }
        if nf <= t {
            sf = fi.next().expect("peeked").1;
        }
        if ng <= t {
            sg = gi.next().expect("peeked").1;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LMetricResult {
    pub value: f64,
    pub horizon: f64,
}

/// `∫_0^horizon d*(f(s), g(s)) ds`, exact on the merged partition.
pub fn l_metric<A: SpatialPath + ?Sized, B: SpatialPath + ?Sized>(
    f: &A,
    g: &B,
    horizon: f64,
) -> Result<LMetricResult> {
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    if horizon > f.horizon() || horizon > g.horizon() {
        return Err(invalid(format!(
            "horizon {horizon} exceeds path definitions ({}, {})",
            f.horizon(),
            g.horizon()
        )));
    }
    let value = integrate_pair(f.spatial_jumps(), g.spatial_jumps(), horizon, dstar);
    Ok(LMetricResult { value, horizon })
}

/// Lebesgue measure of `{ s <= horizon : f(s) != g(s) }`.
pub fn disagreement<A: SpatialPath + ?Sized, B: SpatialPath + ?Sized>(f: &A, g: &B, horizon: f64) -> f64 {
    integrate_pair(f.spatial_jumps(), g.spatial_jumps(), horizon, |a, b| f64::from(u8::from(a != b)))
}

/// A torus walk path seen in rescaled coordinates: space divided by `N`,
/// time divided by `time_scale`. The underlying path is kept unchanged so
/// that undoing the rescaling is exact.
#[derive(Debug, Clone)]
pub struct RescaledPath {
    base: PathSample<GridPoint>,
    time_scale: f64,
    n: usize,
    horizon: f64,
}

impl RescaledPath {
    pub fn base(&self) -> &PathSample<GridPoint> {
        &self.base
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    /// Materialise the rescaled jumps.
    pub fn to_path(&self) -> PathSample<SpatialState> {
        PathSample {
            jumps: self.spatial_jumps().collect(),
            horizon: self.horizon,
        }
    }
}

impl SpatialPath for RescaledPath {
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn spatial_jumps(&self) -> Box<dyn Iterator<Item = (f64, SpatialState)> + '_> {
        let n = self.n as f64;
        let s = self.time_scale;
        let h = self.horizon;
        Box::new(
            self.base
                .jumps
                .iter()
                .map(move |(t, p)| (t / s, SpatialState::Point([p.x as f64 / n, p.y as f64 / n])))
                .take_while(move |(t, _)| *t <= h),
        )
    }
}

/// `t ↦ X(s_N t) / N` on `[0, horizon]`; requires the walk to be defined up to
/// `s_N * horizon`.
pub fn rescale_walk_path(
    path: &PathSample<GridPoint>,
    s_n: f64,
    n: usize,
    horizon: f64,
) -> Result<RescaledPath> {
    if !(s_n > 0.0) || n == 0 || !(horizon > 0.0) {
        return Err(invalid("time scale, side length and horizon must be positive"));
    }
    if path.horizon() < s_n * horizon {
        return Err(invalid(format!(
            "walk defined up to {} but rescaling needs {}",
            path.horizon(),
            s_n * horizon
        )));
    }
    Ok(RescaledPath {
        base: path.clone(),
        time_scale: s_n,
        n,
        horizon,
    })
}

/// Inverse of [`rescale_walk_path`].
pub fn unscale(path: &RescaledPath) -> PathSample<GridPoint> {
    path.base.clone()
}

/// Convert an explicit rescaled path back to lattice coordinates. Spatial
/// coordinates are rounded to the lattice, which makes the conversion
/// exact on outputs of [`RescaledPath::to_path`].
pub fn unscale_explicit(path: &PathSample<SpatialState>, s_n: f64, n: usize) -> Result<PathSample<GridPoint>> {
    let mut jumps = Vec::with_capacity(path.len());
    for (t, s) in path.jumps() {
        let SpatialState::Point(p) = s else {
            return Err(invalid("walk paths never visit the point at infinity"));
        };
        let g = GridPoint::new((p[0] * n as f64).round() as i32, (p[1] * n as f64).round() as i32);
        jumps.push((t * s_n, g));
    }
    PathSample::from_jumps(jumps, path.horizon() * s_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64) -> SpatialState {
        SpatialState::Point([x, y])
    }

    #[test]
    fn dstar_examples() {
        assert_eq!(dstar(pt(0.2, 0.2), pt(0.2, 0.2)), 0.0);
        assert_eq!(dstar(pt(0.5, 0.5), SpatialState::Infinity), 1.0);
        assert_eq!(dstar(SpatialState::Infinity, SpatialState::Infinity), 0.0);
        assert!((dstar(pt(0.0, 0.0), pt(1.0, 1.0)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn l_metric_examples() {
        let f = PathSample::from_jumps(vec![(0.0, pt(0.0, 0.0)), (1.0, pt(1.0, 0.0))], 2.0).unwrap();
        let g = PathSample::constant(pt(0.0, 0.0), 2.0).unwrap();
        assert_eq!(l_metric(&f, &g, 2.0).unwrap().value, 1.0);
        assert_eq!(l_metric(&f, &f, 2.0).unwrap().value, 0.0);
        let a = PathSample::constant(pt(0.5, 0.5), 3.0).unwrap();
        let b = PathSample::constant(SpatialState::Infinity, 3.0).unwrap();
        assert_eq!(l_metric(&a, &b, 3.0).unwrap().value, 3.0);
        assert!(l_metric(&a, &b, 4.0).is_err());
    }

    #[test]
    fn path_validation() {
        assert!(PathSample::from_jumps(vec![(0.5, 1u8)], 1.0).is_err());
        assert!(PathSample::from_jumps(vec![(0.0, 1u8), (0.0, 2)], 1.0).is_err());
        assert!(PathSample::from_jumps(vec![(0.0, 1u8), (2.0, 2)], 1.0).is_err());
        let mut p = PathSample::new(1.0).unwrap();
        p.push(0.0, 1u8);
        p.push(0.0, 2);
        p.push(0.5, 3);
        assert_eq!(p.jumps(), &[(0.0, 2), (0.5, 3)]);
        assert_eq!(p.state_at(0.49), Some(&2));
        assert_eq!(p.state_at(0.5), Some(&3));
        assert_eq!(p.state_at(1.5), None);
    }

    #[test]
    fn rescaling() {
        let n = 64;
        let s_n = 1000.0;
        let path = PathSample::from_jumps(
            vec![(0.0, GridPoint::new(32, 32)), (250.0, GridPoint::new(0, 5)), (999.0, GridPoint::new(1, 5))],
            1000.0,
        )
        .unwrap();
        let r = rescale_walk_path(&path, s_n, n, 1.0).unwrap();
        let explicit = r.to_path();
        assert_eq!(explicit.jumps()[0], (0.0, pt(0.5, 0.5)));
        assert_eq!(explicit.jumps()[1].0, 0.25);
        assert_eq!(unscale(&r), path);
        assert!(rescale_walk_path(&path, s_n, n, 2.0).is_err());
        let back = unscale_explicit(&explicit, s_n, n).unwrap();
        for (a, b) in back.jumps().iter().zip(path.jumps()) {
            assert_eq!(a.1, b.1);
        }
    }

    fn arb_path(h: f64) -> impl Strategy<Value = PathSample<SpatialState>> {
        proptest::collection::vec((0.0..h, 0.0..1.0f64, 0.0..1.0f64, proptest::bool::weighted(0.1)), 0..12)
            .prop_map(move |mut v| {
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut p = PathSample::new(h).unwrap();
                p.push(0.0, SpatialState::Point([0.5, 0.5]));
                for (t, x, y, inf) in v {
                    p.push(t, if inf { SpatialState::Infinity } else { SpatialState::Point([x, y]) });
                }
                p
            })
    }

    proptest! {
        #[test]
        fn l_metric_is_pseudometric(f in arb_path(3.0), g in arb_path(3.0), k in arb_path(3.0)) {
            let d = |a: &PathSample<SpatialState>, b: &PathSample<SpatialState>| l_metric(a, b, 3.0).unwrap().value;
            prop_assert_eq!(d(&f, &g), d(&g, &f));
            prop_assert!(d(&f, &k) <= d(&f, &g) + d(&g, &k) + 1e-12);
            prop_assert!(d(&f, &g) <= 3.0 * 2f64.sqrt() + 1e-12);
            prop_assert_eq!(d(&f, &f), 0.0);
        }
    }
}
