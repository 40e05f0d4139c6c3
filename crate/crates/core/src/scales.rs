//! Deterministic constants and scale sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `g = 2/π`, the prefactor of the logarithmic Green function growth.
pub const G: f64 = std::f64::consts::FRAC_2_PI;

/// `α = sqrt(2π)`; the glassy phase is `β > α`.
pub const ALPHA: f64 = 2.506_628_274_631_000_7;

fn sqrt_g() -> f64 {
    G.sqrt()
}

/// Centering `m_N = 2 sqrt(g) log N - (3/4) sqrt(g) log log N`, defined for `N >= 3`.
pub fn centering_m(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::Domain(format!(
            "centering m_N needs N >= 3 so that log log N > 0, got N = {n}"
        )));
    }
    let ln = (n as f64).ln();
    Ok(2.0 * sqrt_g() * ln - 0.75 * sqrt_g() * ln.ln())
}

/// Time scale `s_N = g N^{2 sqrt(g) β} (log N)^{1 - 3 sqrt(g) β / 4}`.
pub fn time_scale(n: usize, beta: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::Domain(format!("time scale s_N needs N >= 3, got N = {n}")));
    }
    let nf = n as f64;
    let sg = sqrt_g();
    Ok(G * nf.powf(2.0 * sg * beta) * nf.ln().powf(1.0 - 0.75 * sg * beta))
}

/// Separation scale `r_N = N / log N`.
pub fn separation_scale(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain(format!("r_N needs N >= 2, got N = {n}")));
    }
    Ok(n as f64 / (n as f64).ln())
}

/// Step budget `ϑ_N(k) = k * ceil(N^2 log N)`.
pub fn step_budget(n: usize, k: u64) -> u64 {
    if n < 2 {
        return 0;
    }
    let nf = n as f64;
    k * (nf * nf * nf.ln()).ceil() as u64
}

/// All scale constants for one `(N, β)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConstants {
    pub n: usize,
    pub beta: f64,
    pub g: f64,
    pub alpha: f64,
    pub m_n: f64,
    pub s_n: f64,
    pub r_n: f64,
}

impl ScaleConstants {
    pub fn new(n: usize, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(ScaleConstants {
            n,
            beta,
            g: G,
            alpha: ALPHA,
            m_n: centering_m(n)?,
            s_n: time_scale(n, beta)?,
            r_n: separation_scale(n)?,
        })
    }

    pub fn theta(&self, k: u64) -> u64 {
        step_budget(self.n, k)
    }

    /// `s_N` recomputed through `g e^{β m_N} log N`.
    pub fn s_n_via_centering(&self) -> f64 {
        self.g * (self.beta * self.m_n).exp() * (self.n as f64).ln()
    }
}
