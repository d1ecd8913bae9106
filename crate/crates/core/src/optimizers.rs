//! Stepping rules sharing one contract: `(θ, g, state) -> (θ', state', report)`.
//!
//! MAdam and LaMAdam replace the fixed second-moment coefficient of Adam and
//! LaProp with the per-coordinate MaxVA coefficient. Adam, AMSGrad, LaProp,
//! AdaBound and heavy-ball SGD are the baselines. All of them support
//! decoupled weight decay, which moves `θ ← θ - η_t λ θ` before the gradient
//! step within the same call.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::maxva::{maxva_step_beta, BetaBounds, MaxVAState};
use crate::schedule::LrSchedule;
use crate::vecmath::{mean_abs, CoordVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    MAdam,
    LaMAdam,
    Adam,
    AMSGrad,
    LaProp,
    AdaBound,
    Sgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::MAdam,
        Algorithm::LaMAdam,
        Algorithm::Adam,
        Algorithm::AMSGrad,
        Algorithm::LaProp,
        Algorithm::AdaBound,
        Algorithm::Sgd,
    ];

    pub fn uses_maxva(self) -> bool {
        matches!(self, Algorithm::MAdam | Algorithm::LaMAdam)
    }

    /// Normalizes the gradient before the first-moment average.
    pub fn is_laprop_family(self) -> bool {
        matches!(self, Algorithm::LaProp | Algorithm::LaMAdam)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MAdam => "madam",
            Algorithm::LaMAdam => "lamadam",
            Algorithm::Adam => "adam",
            Algorithm::AMSGrad => "amsgrad",
            Algorithm::LaProp => "laprop",
            Algorithm::AdaBound => "adabound",
            Algorithm::Sgd => "sgd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown optimizer '{s}'")))
    }
}

/// Algorithm selector plus every hyperparameter any algorithm might consult.
/// Only the fields relevant to `algorithm` are read.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub eta: LrSchedule,
    /// First-moment coefficient α.
    pub alpha: f64,
    /// Fixed second-moment coefficient for the non-MaxVA algorithms.
    pub beta: f64,
    /// MaxVA clipping bounds (MAdam, LaMAdam).
    pub bounds: BetaBounds,
    pub epsilon: f64,
    /// Decoupled weight-decay coefficient λ.
    pub weight_decay: f64,
    /// Track the running maximum of the bias-corrected second moment.
    pub amsgrad: bool,
    pub adabound_gamma: f64,
    pub adabound_final_lr: f64,
    /// Heavy-ball coefficient (SGD only).
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            eta: LrSchedule::default(),
            alpha: 0.9,
            beta: 0.999,
            bounds: BetaBounds::default(),
            epsilon: if algorithm.is_laprop_family() { 1e-15 } else { 1e-8 },
            weight_decay: 0.0,
            amsgrad: algorithm == Algorithm::AMSGrad,
            adabound_gamma: 1e-3,
            adabound_final_lr: 0.1,
            momentum: 0.9,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = LrSchedule::Constant(eta);
        self
    }

    pub fn with_schedule(mut self, eta: LrSchedule) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_bounds(mut self, bounds: BetaBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_weight_decay(mut self, lambda: f64) -> Self {
        self.weight_decay = lambda;
        self
    }

    pub fn with_amsgrad(mut self, on: bool) -> Self {
        self.amsgrad = on || self.algorithm == Algorithm::AMSGrad;
        self
    }

    pub fn with_adabound(mut self, gamma: f64, final_lr: f64) -> Self {
        self.adabound_gamma = gamma;
        self.adabound_final_lr = final_lr;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    fn tracks_max(&self) -> bool {
        self.amsgrad || self.algorithm == Algorithm::AMSGrad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        match self.algorithm {
            Algorithm::MAdam | Algorithm::LaMAdam => self.bounds.validate()?,
            Algorithm::Sgd => {
                if !(0.0..1.0).contains(&self.momentum) {
                    return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
                }
            }
            _ => {
                if !(self.beta > 0.0 && self.beta < 1.0) {
                    return bad(format!("beta must lie in (0, 1), got {}", self.beta));
                }
            }
        }
        if self.algorithm == Algorithm::AdaBound && !(self.adabound_gamma >= 0.0 && self.adabound_final_lr > 0.0) {
            return bad("adabound requires gamma >= 0 and final_lr > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SecondMoment {
    MaxVA(MaxVAState),
    /// Plain exponential moving average with a fixed coefficient.
    Ema { v_tilde: CoordVector },
    /// SGD keeps no second moment.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// First-moment accumulator (momentum buffer for SGD).
    pub m_tilde: CoordVector,
    pub second: SecondMoment,
    /// Running max of the bias-corrected second moment, present iff max-tracking.
    pub v_hat: Option<CoordVector>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Self {
        let second = match cfg.algorithm {
            Algorithm::MAdam | Algorithm::LaMAdam => SecondMoment::MaxVA(MaxVAState::new(dim)),
            Algorithm::Sgd => SecondMoment::None,
            _ => SecondMoment::Ema {
                v_tilde: CoordVector::zeros(dim),
            },
        };
        let v_hat = (cfg.tracks_max() && cfg.algorithm != Algorithm::Sgd).then(|| CoordVector::zeros(dim));
        Self {
            m_tilde: CoordVector::zeros(dim),
            second,
            v_hat,
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m_tilde.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// `θ_t - θ_{t-1}`, including weight decay.
    pub update: CoordVector,
    /// Mean absolute gradient-driven move: `|η m/(√v+ε)|` (Adam family) or `|η m|` (LaProp family).
    pub step_size_avg: f64,
    /// Second-moment coefficient applied this step (per coordinate).
    pub beta_used: CoordVector,
    /// Bias-corrected second moment in the denominator (the running max under AMSGrad).
    pub v_effective: CoordVector,
}

/// One optimizer step, dispatched on `cfg.algorithm`.
pub fn step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    match cfg.algorithm {
        Algorithm::MAdam => madam_step(theta, g, state, cfg),
        Algorithm::LaMAdam => lamadam_step(theta, g, state, cfg),
        Algorithm::Adam => adam_step(theta, g, state, cfg),
        Algorithm::AMSGrad => amsgrad_step(theta, g, state, cfg),
        Algorithm::LaProp => laprop_step(theta, g, state, cfg),
        Algorithm::AdaBound => adabound_step(theta, g, state, cfg),
        Algorithm::Sgd => sgd_step(theta, g, state, cfg),
    }
}

// Zero denominators only arise when the matching numerator is also zero
// (no signal ever seen on that coordinate with ε = 0).
fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn expect(cfg: &OptimizerConfig, allowed: &[Algorithm]) -> Result<()> {
    if allowed.contains(&cfg.algorithm) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "step rule for {allowed:?} called with algorithm {}",
            cfg.algorithm
        )))
    }
}

fn precheck(theta: &CoordVector, g: &CoordVector, state: &OptimizerState) -> Result<u64> {
    theta.check_len(state.dim())?;
    g.check_len(state.dim())?;
    let t = state.t + 1;
    if !g.is_finite() || !theta.is_finite() {
        return Err(Error::NumericFailure { step: t });
    }
    Ok(t)
}

fn wrong_state() -> Error {
    Error::InvalidArgument("optimizer state does not match the configured algorithm".into())
}

/// Applies decoupled weight decay and the gradient-driven `step_move`, then
/// builds the report.
fn finish(
    theta: &CoordVector,
    step_move: Vec<f64>,
    eta: f64,
    lambda: f64,
    t: u64,
    beta_used: CoordVector,
    v_effective: CoordVector,
) -> Result<(CoordVector, StepReport)> {
    let step_move = CoordVector::new(step_move)?;
    let next: Vec<f64> = theta
        .iter()
        .zip(&step_move)
        .map(|(&th, &mv)| th - eta * lambda * th - mv)
        .collect();
    let next = CoordVector::new(next)?;
    if !next.is_finite() {
        return Err(Error::NumericFailure { step: t });
    }
    let update = CoordVector::new(next.iter().zip(theta).map(|(a, b)| a - b).collect())?;
    let report = StepReport {
        update,
        step_size_avg: mean_abs(&step_move),
        beta_used,
        v_effective,
    };
    Ok((next, report))
}

fn fold_max(v_hat: Option<&CoordVector>, v: &CoordVector) -> Option<CoordVector> {
    v_hat.map(|vh| CoordVector::new(vh.iter().zip(v).map(|(&a, &b)| a.max(b)).collect()).expect("non-empty"))
}

/// MAdam: Adam whose second moment uses the MaxVA coefficient. The parameter
/// update is `θ - η √w_t/(1-α^t) · m̃_t/(√ṽ_t + ε)`.
pub fn madam_step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    expect(cfg, &[Algorithm::MAdam])?;
    let t = precheck(theta, g, state)?;
    let SecondMoment::MaxVA(mv) = &state.second else {
        return Err(wrong_state());
    };
    let eta = cfg.eta.at(t);
    let alpha = cfg.alpha;
    let corr = 1.0 / (1.0 - alpha.powi(t as i32));

    let m_tilde = CoordVector::new(
        state
            .m_tilde
            .iter()
            .zip(g)
            .map(|(&m, &gi)| alpha * m + (1.0 - alpha) * gi)
            .collect(),
    )?;
    let (beta, mv_next) = maxva_step_beta(mv, g, &cfg.bounds)?;
    let v_bc = CoordVector::new(mv_next.v_tilde.iter().zip(&mv_next.w).map(|(v, w)| v / w).collect())?;
    let v_hat = fold_max(state.v_hat.as_ref(), &v_bc);

    let n = state.dim();
    let step_move: Vec<f64> = (0..n)
        .map(|i| {
            let w = mv_next.w[i];
            // With max-tracking, √(w v̂) replaces √ṽ so the untouched case is identical.
            let root = match &v_hat {
                Some(vh) => (w * vh[i]).sqrt(),
                None => mv_next.v_tilde[i].sqrt(),
            };
            eta * w.sqrt() * corr * safe_div(m_tilde[i], root + cfg.epsilon)
        })
        .collect();
    let v_eff = v_hat.clone().unwrap_or(v_bc);
    let (next_theta, report) = finish(theta, step_move, eta, cfg.weight_decay, t, beta, v_eff)?;
    let next_state = OptimizerState {
        m_tilde,
        second: SecondMoment::MaxVA(mv_next),
        v_hat,
        t,
    };
    Ok((next_theta, next_state, report))
}

/// LaMAdam: LaProp whose normalizer uses the MaxVA second moment. The
/// gradient is divided by `√(ṽ_t/w_t) + ε` before entering the first moment.
pub fn lamadam_step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    expect(cfg, &[Algorithm::LaMAdam])?;
    let t = precheck(theta, g, state)?;
    let SecondMoment::MaxVA(mv) = &state.second else {
        return Err(wrong_state());
    };
    let eta = cfg.eta.at(t);
    let alpha = cfg.alpha;
    let corr = 1.0 / (1.0 - alpha.powi(t as i32));

    let (beta, mv_next) = maxva_step_beta(mv, g, &cfg.bounds)?;
    let v_bc = CoordVector::new(mv_next.v_tilde.iter().zip(&mv_next.w).map(|(v, w)| v / w).collect())?;
    let v_hat = fold_max(state.v_hat.as_ref(), &v_bc);
    let v_eff = v_hat.clone().unwrap_or(v_bc);

    let m_tilde = CoordVector::new(
        (0..state.dim())
            .map(|i| {
                let normalized = safe_div(g[i], v_eff[i].sqrt() + cfg.epsilon);
                alpha * state.m_tilde[i] + (1.0 - alpha) * normalized
            })
            .collect(),
    )?;
    let step_move: Vec<f64> = m_tilde.iter().map(|m| eta * corr * m).collect();
    let (next_theta, report) = finish(theta, step_move, eta, cfg.weight_decay, t, beta, v_eff)?;
    let next_state = OptimizerState {
        m_tilde,
        second: SecondMoment::MaxVA(mv_next),
        v_hat,
        t,
    };
    Ok((next_theta, next_state, report))
}

/// Fixed-β moment update shared by Adam, AMSGrad, LaProp and AdaBound.
/// Returns `(ṽ_t, v_t bias-corrected, v̂_t)`.
fn ema_second_moment(
    state: &OptimizerState,
    g: &CoordVector,
    beta: f64,
    t: u64,
) -> Result<(CoordVector, CoordVector, Option<CoordVector>)> {
    let SecondMoment::Ema { v_tilde } = &state.second else {
        return Err(wrong_state());
    };
    let v_tilde = CoordVector::new(
        v_tilde
            .iter()
            .zip(g)
            .map(|(&v, &gi)| beta * v + (1.0 - beta) * gi * gi)
            .collect(),
    )?;
    let corr = 1.0 - beta.powi(t as i32);
    let v_bc = v_tilde.map(|v| v / corr);
    let v_hat = fold_max(state.v_hat.as_ref(), &v_bc);
    Ok((v_tilde, v_bc, v_hat))
}

fn ema_first_moment(m_tilde: &CoordVector, g: &CoordVector, alpha: f64) -> Result<CoordVector> {
    CoordVector::new(
        m_tilde
            .iter()
            .zip(g)
            .map(|(&m, &gi)| alpha * m + (1.0 - alpha) * gi)
            .collect(),
    )
}

fn adam_like(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
    bound: Option<(f64, f64)>,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    let t = precheck(theta, g, state)?;
    let eta = cfg.eta.at(t);
    let corr = 1.0 / (1.0 - cfg.alpha.powi(t as i32));
    let m_tilde = ema_first_moment(&state.m_tilde, g, cfg.alpha)?;
    let (v_tilde, v_bc, v_hat) = ema_second_moment(state, g, cfg.beta, t)?;
    let v_eff = v_hat.clone().unwrap_or(v_bc);
    let step_move: Vec<f64> = (0..state.dim())
        .map(|i| {
            let m = m_tilde[i] * corr;
            let den = v_eff[i].sqrt() + cfg.epsilon;
            match bound {
                Some((lo, hi)) => {
                    let rate = if den == 0.0 { hi } else { eta / den };
                    rate.clamp(lo, hi) * m
                }
                None => eta * safe_div(m, den),
            }
        })
        .collect();
    let beta_used = CoordVector::filled(state.dim(), cfg.beta);
    let (next_theta, report) = finish(theta, step_move, eta, cfg.weight_decay, t, beta_used, v_eff)?;
    let next_state = OptimizerState {
        m_tilde,
        second: SecondMoment::Ema { v_tilde },
        v_hat,
        t,
    };
    Ok((next_theta, next_state, report))
}

/// Adam with bias correction; honours `cfg.amsgrad`.
pub fn adam_step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    expect(cfg, &[Algorithm::Adam])?;
    adam_like(theta, g, state, cfg, None)
}

/// Adam with the denominator taken from the running max of bias-corrected `v`.
pub fn amsgrad_step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    expect(cfg, &[Algorithm::AMSGrad])?;
    if state.v_hat.is_none() {
        return Err(wrong_state());
    }
    adam_like(theta, g, state, cfg, None)
}

/// AdaBound: the per-coordinate rate `η/(√v+ε)` is clipped into
/// `[lr*(1 - 1/(γt+1)), lr*(1 + 1/(γt))]` with `lr = final_lr`.
pub fn adabound_step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    expect(cfg, &[Algorithm::AdaBound])?;
    let t = (state.t + 1) as f64;
    let gt = cfg.adabound_gamma * t;
    let lo = cfg.adabound_final_lr * (1.0 - 1.0 / (gt + 1.0));
    let hi = cfg.adabound_final_lr * (1.0 + 1.0 / gt);
    adam_like(theta, g, state, cfg, Some((lo, hi)))
}

/// LaProp: `m̃ ← α m̃ + (1-α) g/(√v_t + ε)`, `θ ← θ - η m̃/(1-α^t)`.
pub fn laprop_step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    expect(cfg, &[Algorithm::LaProp])?;
    let t = precheck(theta, g, state)?;
    let eta = cfg.eta.at(t);
    let alpha = cfg.alpha;
    let corr = 1.0 / (1.0 - alpha.powi(t as i32));
    let (v_tilde, v_bc, v_hat) = ema_second_moment(state, g, cfg.beta, t)?;
    let v_eff = v_hat.clone().unwrap_or(v_bc);
    let m_tilde = CoordVector::new(
        (0..state.dim())
            .map(|i| alpha * state.m_tilde[i] + (1.0 - alpha) * safe_div(g[i], v_eff[i].sqrt() + cfg.epsilon))
            .collect(),
    )?;
    let step_move: Vec<f64> = m_tilde.iter().map(|m| eta * corr * m).collect();
    let beta_used = CoordVector::filled(state.dim(), cfg.beta);
    let (next_theta, report) = finish(theta, step_move, eta, cfg.weight_decay, t, beta_used, v_eff)?;
    let next_state = OptimizerState {
        m_tilde,
        second: SecondMoment::Ema { v_tilde },
        v_hat,
        t,
    };
    Ok((next_theta, next_state, report))
}

/// Heavy-ball SGD: `b ← μ b + g`, `θ ← θ - η b`.
pub fn sgd_step(
    theta: &CoordVector,
    g: &CoordVector,
    state: &OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(CoordVector, OptimizerState, StepReport)> {
    expect(cfg, &[Algorithm::Sgd])?;
    let t = precheck(theta, g, state)?;
    let eta = cfg.eta.at(t);
    let buf = CoordVector::new(
        state
            .m_tilde
            .iter()
            .zip(g)
            .map(|(&b, &gi)| cfg.momentum * b + gi)
            .collect(),
    )?;
    let step_move: Vec<f64> = buf.iter().map(|b| eta * b).collect();
    let n = state.dim();
    let (next_theta, report) = finish(
        theta,
        step_move,
        eta,
        cfg.weight_decay,
        t,
        CoordVector::zeros(n),
        CoordVector::filled(n, 1.0),
    )?;
    let next_state = OptimizerState {
        m_tilde: buf,
        second: SecondMoment::None,
        v_hat: None,
        t,
    };
    Ok((next_theta, next_state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> CoordVector {
        CoordVector::new(xs.to_vec()).unwrap()
    }

    fn run(cfg: &OptimizerConfig, theta0: &[f64], grads: &[Vec<f64>]) -> Vec<CoordVector> {
        let mut theta = v(theta0);
        let mut state = OptimizerState::new(cfg, theta0.len());
        let mut out = vec![];
        for g in grads {
            let (th, st, _) = step(&theta, &v(g), &state, cfg).unwrap();
            theta = th;
            state = st;
            out.push(theta.clone());
        }
        out
    }

    #[test]
    fn first_step_is_signed_eta_for_adaptive_methods() {
        let g = v(&[3.0, -0.25, 1e-3]);
        let theta = v(&[0.0, 0.0, 0.0]);
        for alg in [
            Algorithm::MAdam,
            Algorithm::LaMAdam,
            Algorithm::Adam,
            Algorithm::AMSGrad,
            Algorithm::LaProp,
        ] {
            let cfg = OptimizerConfig::new(alg).with_eta(0.1).with_epsilon(0.0);
            let state = OptimizerState::new(&cfg, 3);
            let (_, _, report) = step(&theta, &g, &state, &cfg).unwrap();
            for i in 0..3 {
                let expected = -0.1 * g[i].signum();
                assert!((report.update[i] - expected).abs() < 1e-12, "{alg}: {:?}", report.update);
            }
        }
    }

    #[test]
    fn weight_decay_acts_without_gradient() {
        for alg in Algorithm::ALL {
            let cfg = OptimizerConfig::new(alg).with_eta(0.01).with_weight_decay(0.1);
            let state = OptimizerState::new(&cfg, 1);
            let (th, _, report) = step(&v(&[1.0]), &v(&[0.0]), &state, &cfg).unwrap();
            assert!((th[0] - (1.0 - 0.001)).abs() < 1e-15, "{alg}: {}", th[0]);
            assert_eq!(report.step_size_avg, 0.0);
        }
    }

    #[test]
    fn lamadam_constant_gradient_moves_at_unit_rate() {
        let cfg = OptimizerConfig::new(Algorithm::LaMAdam)
            .with_eta(0.05)
            .with_alpha(0.0)
            .with_epsilon(0.0);
        let traj = run(&cfg, &[1.0], &vec![vec![-2.5]; 20]);
        let mut prev = 1.0;
        for th in traj {
            assert!((th[0] - prev - 0.05).abs() < 1e-12);
            prev = th[0];
        }
    }

    #[test]
    fn bias_corrected_first_moment_of_constant_stream() {
        // Adam with β = α: m_t and v_t are exact, so every move is η·sign(c).
        let c = 0.7;
        let cfg = OptimizerConfig::new(Algorithm::Adam)
            .with_eta(0.01)
            .with_alpha(0.9)
            .with_beta(0.99)
            .with_epsilon(0.0);
        let traj = run(&cfg, &[0.0], &vec![vec![c]; 30]);
        for (k, th) in traj.iter().enumerate() {
            assert!((th[0] + 0.01 * (k + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn amsgrad_denominator_frozen_at_peak() {
        let cfg = OptimizerConfig::new(Algorithm::AMSGrad).with_beta(0.9).with_alpha(0.0);
        let mut state = OptimizerState::new(&cfg, 1);
        let mut theta = v(&[0.0]);
        let mut prev = 0.0;
        for k in 0..40 {
            let g = if k == 0 { 10.0 } else { 1.0 };
            let (th, st, report) = step(&theta, &v(&[g]), &state, &cfg).unwrap();
            assert!(report.v_effective[0] >= prev);
            if k == 0 {
                assert!((report.v_effective[0] - 100.0).abs() < 1e-9);
            } else {
                assert_eq!(report.v_effective[0], prev);
            }
            prev = report.v_effective[0];
            theta = th;
            state = st;
        }
    }

    #[test]
    fn adabound_with_vanishing_gamma_matches_adam() {
        let grads: Vec<Vec<f64>> = (0..50).map(|k| vec![((k * 7 % 11) as f64 - 5.0) * 0.3, 1.0 / (1.0 + k as f64)]).collect();
        let adam = OptimizerConfig::new(Algorithm::Adam).with_eta(0.01);
        let bound = OptimizerConfig::new(Algorithm::AdaBound)
            .with_eta(0.01)
            .with_adabound(1e-14, 0.1);
        let a = run(&adam, &[0.5, -0.5], &grads);
        let b = run(&bound, &[0.5, -0.5], &grads);
        for (x, y) in a.iter().zip(&b) {
            for i in 0..2 {
                assert!((x[i] - y[i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn adabound_clips_rate_into_bounds() {
        // Large γt makes both bounds ~final_lr; the move becomes final_lr * m.
        let cfg = OptimizerConfig::new(Algorithm::AdaBound)
            .with_eta(10.0)
            .with_alpha(0.0)
            .with_adabound(1e9, 0.1);
        let state = OptimizerState::new(&cfg, 1);
        let (_, _, report) = step(&v(&[0.0]), &v(&[2.0]), &state, &cfg).unwrap();
        assert!((report.update[0] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn sgd_heavy_ball() {
        let cfg = OptimizerConfig::new(Algorithm::Sgd).with_eta(0.1).with_momentum(0.5);
        let traj = run(&cfg, &[0.0], &[vec![1.0], vec![1.0]]);
        assert!((traj[0][0] + 0.1).abs() < 1e-15);
        assert!((traj[1][0] + 0.1 + 0.15).abs() < 1e-15);
    }

    #[test]
    fn nonfinite_gradient_reports_step() {
        let cfg = OptimizerConfig::new(Algorithm::MAdam);
        let state = OptimizerState::new(&cfg, 2);
        let (th, st, _) = step(&v(&[0.0, 0.0]), &v(&[1.0, 1.0]), &state, &cfg).unwrap();
        let err = step(&th, &v(&[f64::NAN, 1.0]), &st, &cfg).unwrap_err();
        assert_eq!(err, Error::NumericFailure { step: 2 });
    }

    #[test]
    fn mismatched_dimensions_and_algorithms() {
        let cfg = OptimizerConfig::new(Algorithm::Adam);
        let state = OptimizerState::new(&cfg, 2);
        assert!(matches!(
            step(&v(&[0.0]), &v(&[1.0]), &state, &cfg),
            Err(Error::Dimension { .. })
        ));
        assert!(madam_step(&v(&[0.0, 0.0]), &v(&[1.0, 1.0]), &state, &cfg).is_err());
    }

    #[test]
    fn parse_names() {
        for alg in Algorithm::ALL {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
        }
        assert!("rmsprop".parse::<Algorithm>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::new(Algorithm::Adam).validate().is_ok());
        assert!(OptimizerConfig::new(Algorithm::Adam).with_alpha(1.0).validate().is_err());
        assert!(OptimizerConfig::new(Algorithm::Adam).with_beta(1.0).validate().is_err());
        assert!(OptimizerConfig::new(Algorithm::Sgd).with_momentum(1.0).validate().is_err());
        assert_eq!(OptimizerConfig::new(Algorithm::LaProp).epsilon, 1e-15);
        assert_eq!(OptimizerConfig::new(Algorithm::MAdam).epsilon, 1e-8);
        assert!(OptimizerConfig::new(Algorithm::AMSGrad).amsgrad);
    }
}
