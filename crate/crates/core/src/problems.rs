//! Synthetic stochastic objectives: the 11-component finite-sample
//! counterexample and the noisy quadratic model (NQM).

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{standard_normal, RunRng};
use crate::vecmath::CoordVector;

/// A stochastic-gradient oracle. Randomness comes only from the caller's
/// stream, so runs with distinct streams never share state.
pub trait Problem: Sync {
    fn dim(&self) -> usize;

    fn initial_theta(&self, rng: &mut RunRng) -> CoordVector;

    fn sample_grad(&self, theta: &CoordVector, rng: &mut RunRng) -> Result<CoordVector>;

    /// The loss reported by the harness.
    fn loss(&self, theta: &CoordVector) -> f64;
}

pub const N_COMPONENTS: usize = 11;

/// `f(θ) = Σ_{i=1}^{11} ℓ_i(θ)` where component 1 is a steep bowl and the other
/// ten are gentle hills. One component index is drawn uniformly per step; the
/// rare large gradient from component 1 is the only pull towards `θ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteSampleProblem {
    pub theta0: f64,
}

impl Default for FiniteSampleProblem {
    fn default() -> Self {
        Self { theta0: 1.0 }
    }
}

fn check_component(i: usize) -> Result<()> {
    if (1..=N_COMPONENTS).contains(&i) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "component index must lie in 1..={N_COMPONENTS}, got {i}"
        )))
    }
}

/// `ℓ_i(θ)`, 1-based component index.
pub fn finite_sample_component_loss(theta: f64, i: usize) -> Result<f64> {
    check_component(i)?;
    let a = theta.abs();
    Ok(match (i == 1, a <= 1.0) {
        (true, true) => 5.5 * theta * theta,
        (false, true) => -0.5 * theta * theta,
        (true, false) => 11.0 * a - 5.5,
        (false, false) => -a + 0.5,
    })
}

/// `∇ℓ_i(θ)`, 1-based component index.
pub fn finite_sample_grad(theta: f64, i: usize) -> Result<f64> {
    check_component(i)?;
    let g = if theta.abs() <= 1.0 { theta } else { theta.signum() };
    Ok(if i == 1 { 11.0 * g } else { -g })
}

/// `∇f(θ)` summed over all 11 components.
pub fn finite_sample_full_grad(theta: f64) -> f64 {
    if theta.abs() <= 1.0 {
        theta
    } else {
        theta.signum()
    }
}

/// `f(θ)`: `θ²/2` inside the unit interval, `|θ| - 1/2` outside.
pub fn finite_sample_loss(theta: f64) -> f64 {
    let a = theta.abs();
    if a <= 1.0 {
        0.5 * theta * theta
    } else {
        a - 0.5
    }
}

impl Problem for FiniteSampleProblem {
    fn dim(&self) -> usize {
        1
    }

    fn initial_theta(&self, _rng: &mut RunRng) -> CoordVector {
        CoordVector::scalar(self.theta0)
    }

    fn sample_grad(&self, theta: &CoordVector, rng: &mut RunRng) -> Result<CoordVector> {
        theta.check_len(1)?;
        let i = rng.random_range(1..=N_COMPONENTS);
        Ok(CoordVector::scalar(finite_sample_grad(theta[0], i)?))
    }

    fn loss(&self, theta: &CoordVector) -> f64 {
        finite_sample_loss(theta[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NqmInit {
    /// `θ_0 ~ N(0, I)` drawn from the run's stream.
    StandardNormal,
    Fixed(CoordVector),
}

/// `f(θ) = E_x[½ Σ h_i (θ_i - x_i)²]` with `x ~ N(0, σ² I)`. The gradient
/// noise on coordinate `i` has variance `h_i² σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NQMProblem {
    pub h: CoordVector,
    pub sigma: f64,
    pub init: NqmInit,
}

impl NQMProblem {
    pub fn new(h: CoordVector, sigma: f64) -> Result<Self> {
        if h.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidArgument("NQM curvatures must be positive".into()));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument("NQM noise scale must be nonnegative".into()));
        }
        Ok(Self {
            h,
            sigma,
            init: NqmInit::StandardNormal,
        })
    }

    pub fn with_init(mut self, init: NqmInit) -> Self {
        self.init = init;
        self
    }
}

/// `g_i = h_i (θ_i - σ ε_i)` for explicit noise `ε`.
pub fn nqm_grad_with_noise(theta: &CoordVector, problem: &NQMProblem, eps: &CoordVector) -> Result<CoordVector> {
    theta.check_len(problem.h.len())?;
    eps.check_len(problem.h.len())?;
    CoordVector::new(
        (0..theta.len())
            .map(|i| problem.h[i] * (theta[i] - problem.sigma * eps[i]))
            .collect(),
    )
}

/// Noisy gradient with `ε_i ~ N(0, 1)` drawn from `rng`, one per coordinate in order.
pub fn nqm_grad(theta: &CoordVector, problem: &NQMProblem, rng: &mut RunRng) -> Result<CoordVector> {
    theta.check_len(problem.h.len())?;
    let eps = CoordVector::new((0..theta.len()).map(|_| standard_normal(rng)).collect())?;
    nqm_grad_with_noise(theta, problem, &eps)
}

/// `(excess, expected)`: excess risk `½ Σ h_i θ_i²` and the full expected loss
/// `excess + ½ Σ h_i σ²`.
pub fn nqm_risk(theta: &CoordVector, problem: &NQMProblem) -> Result<(f64, f64)> {
    theta.check_len(problem.h.len())?;
    let excess: f64 = theta.iter().zip(&problem.h).map(|(t, h)| 0.5 * h * t * t).sum();
    let floor: f64 = problem.h.iter().map(|h| 0.5 * h * problem.sigma * problem.sigma).sum();
    Ok((excess, excess + floor))
}

impl Problem for NQMProblem {
    fn dim(&self) -> usize {
        self.h.len()
    }

    fn initial_theta(&self, rng: &mut RunRng) -> CoordVector {
        match &self.init {
            NqmInit::StandardNormal => {
                CoordVector::new((0..self.h.len()).map(|_| standard_normal(rng)).collect()).expect("non-empty")
            }
            NqmInit::Fixed(theta) => theta.clone(),
        }
    }

    fn sample_grad(&self, theta: &CoordVector, rng: &mut RunRng) -> Result<CoordVector> {
        nqm_grad(theta, self, rng)
    }

    fn loss(&self, theta: &CoordVector) -> f64 {
        nqm_risk(theta, self).map(|(excess, _)| excess).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::run_stream;

    #[test]
    fn component_gradients() {
        assert_eq!(finite_sample_grad(0.5, 1).unwrap(), 5.5);
        assert_eq!(finite_sample_grad(0.5, 7).unwrap(), -0.5);
        for i in 1..=11 {
            assert_eq!(finite_sample_grad(0.0, i).unwrap(), 0.0);
        }
        assert_eq!(finite_sample_grad(-3.0, 1).unwrap(), -11.0);
        assert_eq!(finite_sample_grad(-3.0, 2).unwrap(), 1.0);
        assert!(finite_sample_grad(0.5, 0).is_err());
        assert!(finite_sample_grad(0.5, 12).is_err());
    }

    #[test]
    fn full_gradient() {
        assert_eq!(finite_sample_full_grad(0.5), 0.5);
        assert_eq!(finite_sample_full_grad(2.0), 1.0);
        assert_eq!(finite_sample_full_grad(0.0), 0.0);
    }

    #[test]
    fn full_gradient_is_sum_of_components() {
        let mut rng = run_stream(11, 0);
        for _ in 0..100 {
            let theta: f64 = rng.random_range(-3.0..3.0);
            let sum: f64 = (1..=11).map(|i| finite_sample_grad(theta, i).unwrap()).sum();
            assert!((sum - finite_sample_full_grad(theta)).abs() < 1e-12);
        }
    }

    #[test]
    fn component_losses_continuous_at_seam() {
        for i in 1..=11 {
            for s in [-1.0, 1.0] {
                let inside = finite_sample_component_loss(s, i).unwrap();
                let outside = finite_sample_component_loss(s * (1.0 + 1e-12), i).unwrap();
                assert!((inside - outside).abs() < 1e-10, "component {i}");
            }
        }
        let total: f64 = (1..=11).map(|i| finite_sample_component_loss(1.7, i).unwrap()).sum();
        assert!((total - finite_sample_loss(1.7)).abs() < 1e-12);
    }

    #[test]
    fn nqm_noiseless_and_forced_noise() {
        let p = NQMProblem::new(CoordVector::new(vec![2.0, 0.5]).unwrap(), 0.0).unwrap();
        let theta = CoordVector::new(vec![1.5, -4.0]).unwrap();
        let g = nqm_grad(&theta, &p, &mut run_stream(0, 0)).unwrap();
        assert_eq!(g.as_slice(), &[3.0, -2.0]);

        let p = NQMProblem::new(CoordVector::new(vec![1.0, 1.0]).unwrap(), 1.0).unwrap();
        let ones = CoordVector::new(vec![1.0, 1.0]).unwrap();
        let g = nqm_grad_with_noise(&ones, &p, &CoordVector::zeros(2)).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn nqm_risk_examples() {
        let p = NQMProblem::new(CoordVector::new(vec![1.0, 0.1]).unwrap(), 0.0).unwrap();
        let (excess, _) = nqm_risk(&CoordVector::new(vec![2.0, 2.0]).unwrap(), &p).unwrap();
        assert!((excess - 2.2).abs() < 1e-12);

        let p = NQMProblem::new(CoordVector::new(vec![1.0, 1.0]).unwrap(), 1.0).unwrap();
        let (excess, expected) = nqm_risk(&CoordVector::new(vec![1.0, 0.0]).unwrap(), &p).unwrap();
        assert_eq!((excess, expected), (0.5, 1.5));
        let (excess, expected) = nqm_risk(&CoordVector::zeros(2), &p).unwrap();
        assert_eq!((excess, expected), (0.0, 1.0));
    }

    #[test]
    fn nqm_rejects_bad_parameters() {
        assert!(NQMProblem::new(CoordVector::new(vec![1.0, 0.0]).unwrap(), 1.0).is_err());
        assert!(NQMProblem::new(CoordVector::new(vec![1.0]).unwrap(), -1.0).is_err());
    }
}
