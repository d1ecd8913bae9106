use maxva_lab::oracle::reference_trajectory;
use maxva_lab::optimizers::{step, SecondMoment};
use maxva_lab::vecmath::mean_abs;
use maxva_lab::{Algorithm, BetaBounds, CoordVector, OptimizerConfig, OptimizerState};
use proptest::prelude::*;

fn run(cfg: &OptimizerConfig, theta0: &[f64], grads: &[Vec<f64>]) -> Vec<CoordVector> {
    let mut theta = CoordVector::new(theta0.to_vec()).unwrap();
    let mut state = OptimizerState::new(cfg, theta0.len());
    grads
        .iter()
        .map(|g| {
            let (next, st, _) = step(&theta, &CoordVector::new(g.clone()).unwrap(), &state, cfg).unwrap();
            theta = next;
            state = st;
            theta.clone()
        })
        .collect()
}

fn scalar_run(cfg: &OptimizerConfig, theta0: f64, grads: &[f64]) -> Vec<f64> {
    let g: Vec<Vec<f64>> = grads.iter().map(|&x| vec![x]).collect();
    run(cfg, &[theta0], &g).into_iter().map(|t| t[0]).collect()
}

fn algorithm() -> impl Strategy<Value = Algorithm> {
    prop::sample::select(Algorithm::ALL.to_vec())
}

fn config(alg: Algorithm, alpha: f64, beta: f64, lower: f64, amsgrad: bool, lambda: f64) -> OptimizerConfig {
    OptimizerConfig::new(alg)
        .with_eta(0.05)
        .with_alpha(alpha)
        .with_beta(beta)
        .with_bounds(BetaBounds::new(lower, 0.999).unwrap())
        .with_amsgrad(amsgrad || alg == Algorithm::AMSGrad)
        .with_weight_decay(lambda)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn steps_are_pure(
        alg in algorithm(),
        g in prop::collection::vec(-5.0f64..5.0, 1..6),
        alpha in 0.0f64..0.99,
        amsgrad in any::<bool>(),
    ) {
        let cfg = config(alg, alpha, 0.9, 0.5, amsgrad, 0.01);
        let theta = CoordVector::new(g.iter().map(|x| x * 0.3 + 1.0).collect()).unwrap();
        let grad = CoordVector::new(g).unwrap();
        let state = OptimizerState::new(&cfg, grad.len());
        let snapshot = state.clone();
        let a = step(&theta, &grad, &state, &cfg).unwrap();
        let b = step(&theta, &grad, &state, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(state, snapshot);
        prop_assert_eq!(a.1.t, 1);
        let c = step(&a.0, &grad, &a.1, &cfg).unwrap();
        prop_assert_eq!(c.1.t, 2);
    }

    #[test]
    fn production_matches_reference(
        alg in algorithm(),
        grads in prop::collection::vec(-5.0f64..5.0, 1..60),
        alpha in 0.0f64..0.99,
        beta in 0.5f64..0.999,
        lower in 0.3f64..0.9,
        amsgrad in any::<bool>(),
        lambda in prop::sample::select(vec![0.0, 0.01, 0.1]),
        theta0 in -3.0f64..3.0,
    ) {
        let cfg = config(alg, alpha, beta, lower, amsgrad && alg != Algorithm::Sgd, lambda);
        let prod = scalar_run(&cfg, theta0, &grads);
        let reference = reference_trajectory(&cfg, theta0, &grads);
        let mut scale = theta0.abs();
        for (a, b) in prod.iter().zip(&reference) {
            scale = scale.max(a.abs()).max(b.abs());
            prop_assert!((a - b).abs() <= 1e-12 * scale, "{alg}: {a} vs {b}");
        }
    }

    #[test]
    fn max_tracking_never_decreases(
        alg in prop::sample::select(vec![Algorithm::Adam, Algorithm::AMSGrad, Algorithm::MAdam, Algorithm::LaMAdam, Algorithm::LaProp, Algorithm::AdaBound]),
        grads in prop::collection::vec(-10.0f64..10.0, 1..100),
    ) {
        let cfg = config(alg, 0.9, 0.9, 0.5, true, 0.0);
        let mut theta = CoordVector::scalar(0.0);
        let mut state = OptimizerState::new(&cfg, 1);
        let mut prev = 0.0;
        for g in grads {
            let (next, st, report) = step(&theta, &CoordVector::scalar(g), &state, &cfg).unwrap();
            let vh = st.v_hat.as_ref().unwrap()[0];
            prop_assert!(vh >= prev);
            prop_assert_eq!(report.v_effective[0], vh);
            prev = vh;
            theta = next;
            state = st;
        }
    }

    #[test]
    fn madam_ignores_gradient_scale(
        grads in prop::collection::vec(prop::sample::select(vec![-2.0, -1.0, -0.5, 0.3, 1.0, 1.5, 3.0]), 1..40),
        c in prop::sample::select(vec![0.01, 0.5, 3.0, 100.0]),
        alpha in 0.0f64..0.95,
    ) {
        let cfg = OptimizerConfig::new(Algorithm::MAdam)
            .with_eta(0.1)
            .with_alpha(alpha)
            .with_epsilon(0.0)
            .with_bounds(BetaBounds::new(0.5, 0.99).unwrap());
        let scaled: Vec<f64> = grads.iter().map(|g| g * c).collect();
        let a = scalar_run(&cfg, 1.0, &grads);
        let b = scalar_run(&cfg, 1.0, &scaled);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn constant_gradient_first_moment_is_exact(c in -10.0f64..10.0, alpha in 0.0f64..0.99, steps in 1usize..60) {
        prop_assume!(c != 0.0);
        let cfg = OptimizerConfig::new(Algorithm::Adam).with_alpha(alpha);
        let mut theta = CoordVector::scalar(0.0);
        let mut state = OptimizerState::new(&cfg, 1);
        for t in 1..=steps {
            let (next, st, _) = step(&theta, &CoordVector::scalar(c), &state, &cfg).unwrap();
            let m = st.m_tilde[0] / (1.0 - alpha.powi(t as i32));
            prop_assert!((m - c).abs() <= 1e-12 * c.abs() * t as f64);
            theta = next;
            state = st;
        }
    }

    #[test]
    fn reported_step_size_matches_update(
        alg in algorithm(),
        grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..30),
    ) {
        let cfg = config(alg, 0.9, 0.99, 0.5, false, 0.0);
        let mut theta = CoordVector::new(vec![0.1, -0.2, 0.3]).unwrap();
        let mut state = OptimizerState::new(&cfg, 3);
        for g in grads {
            let (next, st, report) = step(&theta, &CoordVector::new(g).unwrap(), &state, &cfg).unwrap();
            let recomputed = mean_abs(&report.update);
            prop_assert!((recomputed - report.step_size_avg).abs() <= 1e-12 * recomputed.max(1e-300));
            theta = next;
            state = st;
        }
    }
}

#[test]
fn first_step_is_signed_learning_rate() {
    for alg in [Algorithm::MAdam, Algorithm::LaMAdam, Algorithm::Adam, Algorithm::AMSGrad, Algorithm::LaProp] {
        let cfg = OptimizerConfig::new(alg).with_eta(0.3).with_epsilon(0.0);
        let out = run(&cfg, &[0.0, 0.0, 0.0], &[vec![2.0, -0.01, 5e3]]);
        for (x, y) in out[0].iter().zip([-0.3, 0.3, -0.3]) {
            assert!((x - y).abs() < 1e-12, "{alg}: {x} vs {y}");
        }
    }
}

#[test]
fn lamadam_constant_gradient_moves_by_eta() {
    let cfg = OptimizerConfig::new(Algorithm::LaMAdam)
        .with_eta(0.2)
        .with_alpha(0.0)
        .with_epsilon(0.0);
    let traj = scalar_run(&cfg, 0.0, &[-1.5; 20]);
    for (t, th) in traj.iter().enumerate() {
        assert!((th - 0.2 * (t + 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn lamadam_three_step_trace() {
    let cfg = OptimizerConfig::new(Algorithm::LaMAdam)
        .with_eta(0.1)
        .with_alpha(0.9)
        .with_bounds(BetaBounds::new(0.5, 0.99).unwrap())
        .with_epsilon(1e-15);
    let grads = [1.0, -1.0, 2.0];
    let prod = scalar_run(&cfg, 0.0, &grads);
    let reference = reference_trajectory(&cfg, 0.0, &grads);
    for (a, b) in prod.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
    }
    assert!((prod[0] + 0.1).abs() < 1e-14);
}

#[test]
fn adabound_with_vanishing_gamma_is_adam() {
    let grads: Vec<f64> = (0..500).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.3).collect();
    let adam = OptimizerConfig::new(Algorithm::Adam).with_eta(0.01);
    let adabound = OptimizerConfig::new(Algorithm::AdaBound)
        .with_eta(0.01)
        .with_adabound(1e-12, 0.1);
    let a = scalar_run(&adam, 1.0, &grads);
    let b = scalar_run(&adabound, 1.0, &grads);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn weight_decay_alone_shrinks_parameters() {
    for alg in Algorithm::ALL {
        let cfg = OptimizerConfig::new(alg).with_eta(0.01).with_weight_decay(0.1);
        let out = run(&cfg, &[1.0, -2.0], &[vec![0.0, 0.0]]);
        assert_eq!(out[0].as_slice(), &[1.0 - 0.001, -2.0 + 0.002], "{alg}");
    }
}

#[test]
fn state_kind_follows_algorithm() {
    for alg in Algorithm::ALL {
        let state = OptimizerState::new(&OptimizerConfig::new(alg), 2);
        let maxva = matches!(state.second, SecondMoment::MaxVA(_));
        assert_eq!(maxva, alg.uses_maxva(), "{alg}");
        assert_eq!(state.v_hat.is_some(), alg == Algorithm::AMSGrad, "{alg}");
    }
}

#[test]
fn nonfinite_gradient_names_the_step() {
    let cfg = OptimizerConfig::new(Algorithm::MAdam);
    let theta = CoordVector::scalar(1.0);
    let state = OptimizerState::new(&cfg, 1);
    let (theta, state, _) = step(&theta, &CoordVector::scalar(0.5), &state, &cfg).unwrap();
    let err = step(&theta, &CoordVector::scalar(f64::NAN), &state, &cfg).unwrap_err();
    assert_eq!(err, maxva_lab::Error::NumericFailure { step: 2 });
}
