//! Independent verification engines. Compiled only for tests and with the
//! `oracle` feature; nothing here is used by the production step rules.
//!
//! - [`beta_grid_argmax`] maximizes the post-update variance estimate by
//!   direct evaluation on a β grid.
//! - [`finite_diff_grad`] is a central-difference gradient.
//! - [`reference_trajectory`] re-transcribes every step rule as straight-line
//!   scalar code.

use crate::optimizers::{Algorithm, OptimizerConfig};
use crate::vecmath::CoordVector;

/// Variance estimate `ṽ(β)/w(β) - (ũ(β)/w(β))²` after folding `g` into a
/// state whose bias-corrected moments are `(u, v)` with zeroth moment `w`.
/// `None` where the new zeroth moment is not positive.
pub fn sigma_sq_after(beta: f64, g: f64, u: f64, v: f64, w: f64) -> Option<f64> {
    let w_new = beta * w + (1.0 - beta);
    if w_new <= 0.0 {
        return None;
    }
    // Mixture of the old estimate (weight a) and the point g (weight b):
    // σ'² = a·σ² + a·b·(g − u)², algebraically equal to v' − u'² but without
    // the cancellation.
    let a = beta * w / w_new;
    let b = (1.0 - beta) / w_new;
    Some(a * (v - u * u) + a * b * (g - u) * (g - u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArgmax {
    pub beta: f64,
    pub sigma_sq: f64,
    /// Spacing of the finest grid evaluated.
    pub resolution: f64,
}

/// Upper end of the searched β range: `(0, 1]` extended to
/// `min(1/(1-w), 1e6)`, where the zeroth moment would reach zero. The
/// unclipped maximizer always lies below `1/(1-w)`.
pub fn beta_search_upper(w: f64) -> f64 {
    let feasible = if w >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - w) };
    feasible.min(1e6).max(1.0)
}

/// Spacing at which [`beta_grid_argmax`] stops refining.
pub const GRID_TARGET_RESOLUTION: f64 = 1e-8;

fn scan(lo: f64, hi: f64, n: usize, g: f64, u: f64, v: f64, w: f64) -> Option<(f64, f64)> {
    let step = (hi - lo) / n as f64;
    let mut best: Option<(f64, f64)> = None;
    for k in 1..=n {
        let beta = lo + step * k as f64;
        if let Some(s) = sigma_sq_after(beta, g, u, v, w) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((beta, s));
            }
        }
    }
    best
}

/// Brute-force argmax of the post-update variance over β.
///
/// A uniform grid of `grid_size` points covers `(0, beta_search_upper(w)]`.
/// Each further level lays `grid_size` points over one spacing on either side
/// of the previous winner, until the spacing drops below
/// [`GRID_TARGET_RESOLUTION`]. The objective is unimodal in β, so the true
/// maximizer always stays inside the refined window.
pub fn beta_grid_argmax(g: f64, u: f64, v: f64, w: f64, grid_size: usize) -> GridArgmax {
    assert!(grid_size >= 1000, "grid_size must be at least 1000");
    let upper = beta_search_upper(w);
    let mut spacing = upper / grid_size as f64;
    let (mut beta, mut sigma_sq) = scan(0.0, upper, grid_size, g, u, v, w).expect("β near 0 is always feasible");
    while spacing > GRID_TARGET_RESOLUTION {
        let lo = (beta - spacing).max(0.0);
        let hi = (beta + spacing).min(upper);
        spacing = (hi - lo) / grid_size as f64;
        if let Some((b, s)) = scan(lo, hi, grid_size, g, u, v, w) {
            if s >= sigma_sq {
                beta = b;
                sigma_sq = s;
            }
        }
    }
    GridArgmax {
        beta,
        sigma_sq,
        resolution: spacing,
    }
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h`.
pub fn finite_diff_grad(f: impl Fn(&CoordVector) -> f64, params: &CoordVector, step: f64) -> CoordVector {
    assert!(step > 0.0);
    let base = params.as_slice().to_vec();
    let grad = (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += step;
            minus[i] -= step;
            let fp = f(&CoordVector::new(plus).unwrap());
            let fm = f(&CoordVector::new(minus).unwrap());
            (fp - fm) / (2.0 * step)
        })
        .collect();
    CoordVector::new(grad).unwrap()
}

/// θ after each step of `algorithm` on a scalar gradient sequence, transcribed
/// line by line from the printed update rules.
pub fn reference_trajectory(cfg: &OptimizerConfig, theta0: f64, grads: &[f64]) -> Vec<f64> {
    assert!(grads.len() <= 1000);
    match cfg.algorithm {
        Algorithm::MAdam | Algorithm::LaMAdam => reference_maxva(cfg, theta0, grads),
        Algorithm::Sgd => reference_sgd(cfg, theta0, grads),
        _ => reference_fixed_beta(cfg, theta0, grads),
    }
}

fn reference_maxva(cfg: &OptimizerConfig, theta0: f64, grads: &[f64]) -> Vec<f64> {
    let alpha = cfg.alpha;
    let eps = cfg.epsilon;
    let b = cfg.bounds;
    let amsgrad = cfg.amsgrad;
    let lamadam = cfg.algorithm == Algorithm::LaMAdam;
    let (mut m, mut ut, mut vt, mut w) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut vhat = 0.0f64;
    let mut theta = theta0;
    let mut out = Vec::new();
    for (k, &g) in grads.iter().enumerate() {
        let t = (k + 1) as i32;
        let eta = cfg.eta.at(t as u64);
        if !lamadam {
            m = alpha * m + (1.0 - alpha) * g;
        }
        let beta = if t == 1 {
            b.beta_one
        } else {
            let u_prev = ut / w;
            let v_prev = vt / w;
            let var = (v_prev - u_prev * u_prev).max(0.0);
            let dev = (g - u_prev) * (g - u_prev);
            let raw = (dev + var) / (w * (dev - var) + dev + var + b.delta);
            b.beta_lower.max(b.beta_upper.min(raw))
        };
        ut = beta * ut + (1.0 - beta) * g;
        vt = beta * vt + (1.0 - beta) * g * g;
        w = beta * w + (1.0 - beta);
        vhat = vhat.max(vt / w);
        theta -= eta * cfg.weight_decay * theta;
        if lamadam {
            let scale = if amsgrad { vhat.sqrt() } else { (vt / w).sqrt() };
            let den = scale + eps;
            let n = if den == 0.0 { 0.0 } else { g / den };
            m = alpha * m + (1.0 - alpha) * n;
            theta -= eta / (1.0 - alpha.powi(t)) * m;
        } else {
            let root = if amsgrad { (w * vhat).sqrt() } else { vt.sqrt() };
            let den = root + eps;
            let ratio = if den == 0.0 { 0.0 } else { m / den };
            theta -= eta * w.sqrt() / (1.0 - alpha.powi(t)) * ratio;
        }
        out.push(theta);
    }
    out
}

fn reference_fixed_beta(cfg: &OptimizerConfig, theta0: f64, grads: &[f64]) -> Vec<f64> {
    let (alpha, beta, eps) = (cfg.alpha, cfg.beta, cfg.epsilon);
    let amsgrad = cfg.amsgrad || cfg.algorithm == Algorithm::AMSGrad;
    let (mut m, mut v, mut vhat) = (0.0f64, 0.0f64, 0.0f64);
    let mut theta = theta0;
    let mut out = Vec::new();
    for (k, &g) in grads.iter().enumerate() {
        let t = (k + 1) as i32;
        let eta = cfg.eta.at(t as u64);
        v = beta * v + (1.0 - beta) * g * g;
        let v_corr = v / (1.0 - beta.powi(t));
        vhat = vhat.max(v_corr);
        let v_use = if amsgrad { vhat } else { v_corr };
        theta -= eta * cfg.weight_decay * theta;
        match cfg.algorithm {
            Algorithm::LaProp => {
                let den = v_use.sqrt() + eps;
                m = alpha * m + (1.0 - alpha) * if den == 0.0 { 0.0 } else { g / den };
                theta -= eta * m / (1.0 - alpha.powi(t));
            }
            Algorithm::AdaBound => {
                m = alpha * m + (1.0 - alpha) * g;
                let m_corr = m / (1.0 - alpha.powi(t));
                let gt = cfg.adabound_gamma * t as f64;
                let lower = cfg.adabound_final_lr - cfg.adabound_final_lr / (gt + 1.0);
                let upper = cfg.adabound_final_lr + cfg.adabound_final_lr / gt;
                let den = v_use.sqrt() + eps;
                let rate = if den == 0.0 { upper } else { eta / den };
                theta -= rate.max(lower).min(upper) * m_corr;
            }
            _ => {
                m = alpha * m + (1.0 - alpha) * g;
                let m_corr = m / (1.0 - alpha.powi(t));
                let den = v_use.sqrt() + eps;
                theta -= eta * if den == 0.0 { 0.0 } else { m_corr / den };
            }
        }
        out.push(theta);
    }
    out
}

fn reference_sgd(cfg: &OptimizerConfig, theta0: f64, grads: &[f64]) -> Vec<f64> {
    let mut buf = 0.0;
    let mut theta = theta0;
    grads
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let eta = cfg.eta.at(k as u64 + 1);
            buf = cfg.momentum * buf + g;
            theta -= eta * cfg.weight_decay * theta;
            theta -= eta * buf;
            theta
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_argmax_at_unit_ratio_is_one() {
        // u = 0, v = 1, g = 1: Δg² = σ² = 1.
        let r = beta_grid_argmax(1.0, 0.0, 1.0, 0.5, 2000);
        assert!((r.beta - 1.0).abs() < 1e-6, "{}", r.beta);
    }

    #[test]
    fn grid_argmax_worked_example() {
        let r = beta_grid_argmax(2.0, 0.0, 1.0, 0.5, 10_000);
        assert!((r.beta - 0.769_230_769).abs() < 1e-4, "{}", r.beta);
    }

    #[test]
    fn grid_flat_in_degenerate_case() {
        let (g, u, v, w) = (1.5, 1.5, 2.25, 0.4);
        for k in 1..100 {
            let s = sigma_sq_after(k as f64 / 100.0, g, u, v, w).unwrap();
            assert!(s.abs() < 1e-12);
        }
        let r = beta_grid_argmax(g, u, v, w, 1000);
        assert!(r.sigma_sq.abs() < 1e-12);
    }

    #[test]
    fn finite_differences() {
        let theta = CoordVector::new(vec![0.3, -2.0, 5.0]).unwrap();
        let g = finite_diff_grad(|x| 0.5 * x.iter().map(|a| a * a).sum::<f64>(), &theta, 1e-5);
        for i in 0..3 {
            assert!((g[i] - theta[i]).abs() < 1e-8);
        }
        let z = finite_diff_grad(|_| 4.2, &theta, 1e-5);
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_two_step_hand_trace() {
        // α = 0.5, β = 0.5, ε = 0, η = 1, g = (1, 3).
        // t=1: m = 0.5 -> 1; v = 0.5 -> 1; θ = -1.
        // t=2: m = 0.25 + 1.5 = 1.75, m/(1-0.25) = 7/3; v = 0.25 + 4.5 = 4.75, v/0.75 = 19/3.
        let cfg = OptimizerConfig::new(Algorithm::Adam)
            .with_eta(1.0)
            .with_alpha(0.5)
            .with_beta(0.5)
            .with_epsilon(0.0);
        let traj = reference_trajectory(&cfg, 0.0, &[1.0, 3.0]);
        assert!((traj[0] + 1.0).abs() < 1e-15);
        let expected = -1.0 - (7.0 / 3.0) / (19.0f64 / 3.0).sqrt();
        assert!((traj[1] - expected).abs() < 1e-14);
    }

    #[test]
    fn reference_is_deterministic() {
        let cfg = OptimizerConfig::new(Algorithm::MAdam).with_eta(0.1);
        let g = [1.0, -2.0, 0.5, 3.0];
        assert_eq!(reference_trajectory(&cfg, 0.2, &g), reference_trajectory(&cfg, 0.2, &g));
    }
}
