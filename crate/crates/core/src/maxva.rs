//! Maximum-variation averaging of the second moment.
//!
//! Each coordinate keeps weighted zeroth, first and second moments
//! (`w`, `ũ`, `ṽ`) that share one running-average coefficient `β_t`:
//!
//! ```text
//! w_t = β_t w_{t-1} + (1 - β_t)
//! ũ_t = β_t ũ_{t-1} + (1 - β_t) g_t
//! ṽ_t = β_t ṽ_{t-1} + (1 - β_t) g_t²
//! ```
//!
//! `u = ũ/w` and `v = ṽ/w` are the bias-corrected mean and mean square, and
//! `σ² = v - u²` the estimated variance. At every step after the first, `β_t`
//! is chosen per coordinate to maximize the variance that the update would
//! produce. With `Δg = g_t - u_{t-1}` the maximizer is
//!
//! ```text
//! β_t = (Δg² + σ²) / (w (Δg² - σ²) + Δg² + σ² + δ)
//! ```
//!
//! and is then clipped into `[β_lower, β_upper]`. The first step uses the fixed
//! coefficient `β_1` because a single observation has no variance.

use crate::error::{Error, Result};
use crate::vecmath::CoordVector;

pub const DEFAULT_DELTA: f64 = 1e-16;

/// `β_1` used when `β_upper == 1`, where `β_1 = β_upper` would leave `w_1 = 0`.
pub const FALLBACK_BETA_ONE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    pub beta_lower: f64,
    pub beta_upper: f64,
    /// Coefficient used for the very first update.
    pub beta_one: f64,
    /// Guard added to the denominator of the closed form.
    pub delta: f64,
}

impl BetaBounds {
    /// Bounds with `β_1 = β_upper` (or [`FALLBACK_BETA_ONE`] when `β_upper = 1`)
    /// and `δ = 1e-16`.
    pub fn new(beta_lower: f64, beta_upper: f64) -> Result<Self> {
        let beta_one = if beta_upper < 1.0 {
            beta_upper
        } else {
            FALLBACK_BETA_ONE
        };
        let b = Self {
            beta_lower,
            beta_upper,
            beta_one,
            delta: DEFAULT_DELTA,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_beta_one(mut self, beta_one: f64) -> Result<Self> {
        self.beta_one = beta_one;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        // Equal bounds are allowed: they pin β_t and reduce MAdam to Adam.
        let ok_bounds = 0.0 < self.beta_lower && self.beta_lower <= self.beta_upper && self.beta_upper <= 1.0;
        if !ok_bounds {
            return Err(Error::InvalidArgument(format!(
                "beta bounds must satisfy 0 < lower <= upper <= 1, got ({}, {})",
                self.beta_lower, self.beta_upper
            )));
        }
        // w_1 = 1 - β_1 must be positive for bias correction to exist.
        if !(0.0 < self.beta_one && self.beta_one < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta_one must lie in (0, 1), got {}",
                self.beta_one
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

impl Default for BetaBounds {
    fn default() -> Self {
        Self::new(0.5, 0.999).expect("default bounds are valid")
    }
}

/// Weighted moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxVAState {
    pub u_tilde: CoordVector,
    pub v_tilde: CoordVector,
    pub w: CoordVector,
    /// Number of updates applied so far (shared by all coordinates).
    pub t: u64,
}

/// Bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub u: CoordVector,
    pub v: CoordVector,
    /// `v - u²`, floored at zero.
    pub sigma_sq: CoordVector,
}

impl MaxVAState {
    pub fn new(dim: usize) -> Self {
        Self {
            u_tilde: CoordVector::zeros(dim),
            v_tilde: CoordVector::zeros(dim),
            w: CoordVector::zeros(dim),
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `v - u²` per coordinate without flooring; may be slightly negative from roundoff.
    pub fn sigma_sq_unfloored(&self) -> Result<CoordVector> {
        if self.t == 0 {
            return Err(Error::Uninitialized);
        }
        let vals = (0..self.dim())
            .map(|i| {
                let w = self.w[i];
                let u = self.u_tilde[i] / w;
                self.v_tilde[i] / w - u * u
            })
            .collect();
        CoordVector::new(vals)
    }
}

/// Bias-corrected `u`, `v` and `σ²` of a state that has seen at least one update.
pub fn bias_corrected(state: &MaxVAState) -> Result<Moments> {
    if state.t == 0 {
        return Err(Error::Uninitialized);
    }
    let n = state.dim();
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let w = state.w[i];
        let ui = state.u_tilde[i] / w;
        let vi = state.v_tilde[i] / w;
        u.push(ui);
        v.push(vi);
        s.push((vi - ui * ui).max(0.0));
    }
    Ok(Moments {
        u: CoordVector::new(u)?,
        v: CoordVector::new(v)?,
        sigma_sq: CoordVector::new(s)?,
    })
}

/// Closed-form variance-maximizing coefficient, before clipping. Does not
/// mutate `state`.
pub fn compute_beta_raw(g: &CoordVector, state: &MaxVAState, delta: f64) -> Result<CoordVector> {
    g.check_len(state.dim())?;
    let m = bias_corrected(state)?;
    let vals = (0..g.len())
        .map(|i| {
            let dg = g[i] - m.u[i];
            let dg2 = dg * dg;
            let s2 = m.sigma_sq[i];
            let w = state.w[i];
            (dg2 + s2) / (w * (dg2 - s2) + dg2 + s2 + delta)
        })
        .collect();
    CoordVector::new(vals)
}

pub fn clip_beta(beta_raw: &CoordVector, bounds: &BetaBounds) -> CoordVector {
    beta_raw.map(|b| b.min(bounds.beta_upper).max(bounds.beta_lower))
}

/// Applies one interpolation step with per-coordinate coefficients `beta`.
pub fn update_moments(state: &MaxVAState, g: &CoordVector, beta: &CoordVector) -> Result<MaxVAState> {
    let n = state.dim();
    g.check_len(n)?;
    beta.check_len(n)?;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let b = beta[i];
        let gi = g[i];
        w.push(b * state.w[i] + (1.0 - b));
        u.push(b * state.u_tilde[i] + (1.0 - b) * gi);
        v.push(b * state.v_tilde[i] + (1.0 - b) * gi * gi);
    }
    Ok(MaxVAState {
        u_tilde: CoordVector::new(u)?,
        v_tilde: CoordVector::new(v)?,
        w: CoordVector::new(w)?,
        t: state.t + 1,
    })
}

/// Picks `β_t` (fixed `β_1` on the first call, clipped closed form after) and
/// folds `g` into the moments.
pub fn maxva_step_beta(
    state: &MaxVAState,
    g: &CoordVector,
    bounds: &BetaBounds,
) -> Result<(CoordVector, MaxVAState)> {
    g.check_len(state.dim())?;
    let beta = if state.t == 0 {
        CoordVector::filled(state.dim(), bounds.beta_one)
    } else {
        clip_beta(&compute_beta_raw(g, state, bounds.delta)?, bounds)
    };
    let next = update_moments(state, g, &beta)?;
    Ok((beta, next))
}
