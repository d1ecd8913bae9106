//! Randomized verification suites comparing production code against the
//! engines in [`crate::oracle`]. Shared by the CLI `verify` command and the
//! acceptance tests so both check exactly the same properties.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::harness::{run_single, ExperimentSpec, ProblemSpec};
use crate::maxva::{bias_corrected, compute_beta_raw, maxva_step_beta, BetaBounds, MaxVAState};
use crate::optimizers::{step, Algorithm, OptimizerConfig, OptimizerState};
use crate::oracle::{beta_grid_argmax, finite_diff_grad, reference_trajectory, sigma_sq_after};
use crate::problems::{FiniteSampleProblem, NQMProblem};
use crate::rng::{run_stream, standard_normal, RunRng};
use crate::toyml::{logistic_loss_grad, logistic_param_len, mlp_loss_grad, BlobConfig, BlobDataset, MlpShape};
use crate::vecmath::CoordVector;

/// Closed form vs grid argmax: allowed `|Δβ|`.
pub const BETA_TOLERANCE: f64 = 1e-4;
/// Closed form vs grid argmax: allowed shortfall in the maximized variance.
pub const SIGMA_SQ_SLACK: f64 = 1e-10;
/// Production vs reference trajectories, relative.
pub const TRAJECTORY_TOLERANCE: f64 = 1e-12;
/// Analytic vs central-difference gradients, norm-wise relative.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Floor on the norm used to make gradient errors relative.
pub const GRADIENT_NORM_FLOOR: f64 = 1e-8;
/// Lowest admissible unfloored variance estimate.
pub const VARIANCE_FLOOR: f64 = -1e-12;
/// Points per level of the β grid search.
pub const GRID_SIZE: usize = 2000;

/// Failure messages kept per suite; the count is always exact.
const MAX_REPORTED: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    BetaOracle,
    Trajectories,
    Reduction,
    Gradients,
    Invariants,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::BetaOracle,
        Suite::Trajectories,
        Suite::Reduction,
        Suite::Gradients,
        Suite::Invariants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::BetaOracle => "beta-oracle",
            Suite::Trajectories => "trajectories",
            Suite::Reduction => "reduction",
            Suite::Gradients => "gradients",
            Suite::Invariants => "invariants",
        }
    }

    /// Case count used when the caller does not choose one.
    pub fn default_n(self) -> usize {
        match self {
            Suite::BetaOracle => 10_000,
            Suite::Trajectories | Suite::Reduction | Suite::Gradients | Suite::Invariants => 100,
        }
    }

    pub fn run(self, n: usize, seed: u64) -> SuiteReport {
        match self {
            Suite::BetaOracle => beta_oracle_suite(n, seed),
            Suite::Trajectories => trajectory_suite(n, seed),
            Suite::Reduction => reduction_suite(n, seed),
            Suite::Gradients => gradient_suite(n, seed),
            Suite::Invariants => invariant_suite(n, INVARIANT_STEPS, seed),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    /// Individual comparisons performed.
    pub checks: usize,
    pub n_failures: usize,
    /// First few failures, each naming the offending case.
    pub failures: Vec<String>,
    /// Largest error observed on the suite's main metric.
    pub worst: f64,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            checks: 0,
            n_failures: 0,
            failures: Vec::new(),
            worst: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.n_failures == 0 && self.checks > 0
    }

    fn check(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.n_failures += 1;
            if self.failures.len() < MAX_REPORTED {
                self.failures.push(describe());
            }
        }
    }

    fn observe(&mut self, err: f64) {
        if err > self.worst || err.is_nan() {
            self.worst = err;
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ({} checks, {} failures, worst error {:.3e})",
            self.suite,
            if self.passed() { "pass" } else { "FAIL" },
            self.checks,
            self.n_failures,
            self.worst
        )
    }
}

fn state_from_moments(u: f64, v: f64, w: f64) -> MaxVAState {
    MaxVAState {
        u_tilde: CoordVector::scalar(u * w),
        v_tilde: CoordVector::scalar(v * w),
        w: CoordVector::scalar(w),
        t: 1,
    }
}

/// Closed-form β against a brute-force maximization of the post-update
/// variance on `n` random tuples `w ∈ [0.01, 1]`, `u ∈ [-10, 10]`,
/// `v - u² ∈ [0, 10]`, `g ∈ [-10, 10]`.
pub fn beta_oracle_suite(n: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::BetaOracle);
    let mut rng = run_stream(seed, 0);
    for k in 0..n {
        let w: f64 = rng.random_range(0.01..=1.0);
        let u: f64 = rng.random_range(-10.0..=10.0);
        let v = u * u + rng.random_range(0.0..=10.0);
        let g: f64 = rng.random_range(-10.0..=10.0);
        let state = state_from_moments(u, v, w);
        let closed = compute_beta_raw(&CoordVector::scalar(g), &state, 0.0).map(|b| b[0]);
        let Ok(closed) = closed else {
            report.check(false, || format!("tuple {k}: closed form errored (w={w}, u={u}, v={v}, g={g})"));
            continue;
        };
        let grid = beta_grid_argmax(g, u, v, w, GRID_SIZE);
        let at_closed = sigma_sq_after(closed, g, u, v, w).unwrap_or(f64::NEG_INFINITY);
        let dbeta = (closed - grid.beta).abs();
        report.observe(dbeta);
        report.check(dbeta <= BETA_TOLERANCE.max(grid.resolution), || {
            format!(
                "tuple {k}: w={w}, u={u}, v={v}, g={g}: closed β={closed}, grid β={}",
                grid.beta
            )
        });
        report.check(at_closed >= grid.sigma_sq - SIGMA_SQ_SLACK, || {
            format!(
                "tuple {k}: w={w}, u={u}, v={v}, g={g}: σ̂²(closed)={at_closed} < grid best {}",
                grid.sigma_sq
            )
        });
    }
    report
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Gradient stream with a random overall scale and occasional spikes and
/// repeats, so the MaxVA rule visits both small and large deviation ratios.
fn gradient_stream(rng: &mut RunRng, len: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-2.0..=0.0));
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let g = match rng.random_range(0..10) {
            0 if !out.is_empty() => out[out.len() - 1],
            1 => 10.0 * scale * standard_normal(rng),
            _ => scale * standard_normal(rng),
        };
        out.push(g);
    }
    out
}

fn random_bounds(rng: &mut RunRng) -> BetaBounds {
    let lower: f64 = rng.random_range(0.3..0.9);
    let upper: f64 = if rng.random_bool(0.25) { 1.0 } else { rng.random_range(lower..1.0) };
    let bounds = BetaBounds::new(lower, upper).expect("sampled bounds are ordered");
    if rng.random_bool(0.5) {
        bounds.with_beta_one(rng.random_range(0.1..0.99)).expect("β₁ in (0, 1)")
    } else {
        bounds
    }
}

fn random_config(rng: &mut RunRng, algorithm: Algorithm) -> OptimizerConfig {
    let eps = match rng.random_range(0..3) {
        0 => 0.0,
        1 => 1e-8,
        _ => 1e-15,
    };
    let mut cfg = OptimizerConfig::new(algorithm)
        .with_eta(10f64.powf(rng.random_range(-3.0..=0.0)))
        .with_alpha(if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..0.99) })
        .with_beta(rng.random_range(0.5..0.9999))
        .with_bounds(random_bounds(rng))
        .with_epsilon(eps)
        .with_momentum(rng.random_range(0.0..0.95));
    if rng.random_bool(0.3) {
        cfg = cfg.with_weight_decay(rng.random_range(0.0..0.1));
    }
    if algorithm != Algorithm::Sgd && rng.random_bool(0.3) {
        cfg = cfg.with_amsgrad(true);
    }
    if algorithm == Algorithm::AdaBound {
        cfg = cfg.with_adabound(10f64.powf(rng.random_range(-4.0..=-1.0)), rng.random_range(0.01..1.0));
    }
    cfg
}

fn production_trajectory(cfg: &OptimizerConfig, theta0: f64, grads: &[f64]) -> Result<Vec<f64>> {
    let mut theta = CoordVector::scalar(theta0);
    let mut state = OptimizerState::new(cfg, 1);
    let mut out = Vec::with_capacity(grads.len());
    for &g in grads {
        let (next, next_state, _) = step(&theta, &CoordVector::scalar(g), &state, cfg)?;
        theta = next;
        state = next_state;
        out.push(theta[0]);
    }
    Ok(out)
}

/// Largest relative deviation between two trajectories. Deviations are
/// measured against the largest iterate magnitude seen so far, so a trace
/// passing close to zero is not judged by its smallest value.
fn trajectory_error(a: &[f64], b: &[f64], theta0: f64) -> f64 {
    let mut scale = theta0.abs();
    let mut worst: f64 = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        scale = scale.max(x.abs()).max(y.abs());
        if scale > 0.0 {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    worst
}

/// Every algorithm (random hyperparameters, weight decay and max-tracking)
/// against the straight-line reference on `n` random scalar traces of up to
/// 1000 steps each.
pub fn trajectory_suite(n: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Trajectories);
    for k in 0..n {
        for (a, &algorithm) in Algorithm::ALL.iter().enumerate() {
            let mut rng = run_stream(seed, (k * Algorithm::ALL.len() + a) as u64);
            let cfg = random_config(&mut rng, algorithm);
            let len = rng.random_range(1..=1000);
            let grads = gradient_stream(&mut rng, len);
            let theta0 = standard_normal(&mut rng);
            let reference = reference_trajectory(&cfg, theta0, &grads);
            match production_trajectory(&cfg, theta0, &grads) {
                Ok(prod) => {
                    let err = trajectory_error(&prod, &reference, theta0);
                    report.observe(err);
                    report.check(err <= TRAJECTORY_TOLERANCE, || {
                        format!("trace {k}, {algorithm}: relative error {err:.3e} with {cfg:?}")
                    });
                }
                Err(e) => report.check(false, || format!("trace {k}, {algorithm}: step failed: {e}")),
            }
        }
    }
    report
}

/// MAdam with `β̲ = β̄ = β`, `ε = 0` against Adam with the same `β`, `ε = 0` on
/// `n` random 10-step scalar traces.
pub fn reduction_suite(n: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Reduction);
    for k in 0..n {
        let mut rng = run_stream(seed, k as u64);
        let beta: f64 = rng.random_range(0.5..0.9999);
        let alpha: f64 = rng.random_range(0.0..0.99);
        let eta = 10f64.powf(rng.random_range(-3.0..=0.0));
        let grads = gradient_stream(&mut rng, 10);
        let theta0 = standard_normal(&mut rng);
        let bounds = BetaBounds::new(beta, beta).expect("equal bounds are valid");
        let madam = OptimizerConfig::new(Algorithm::MAdam)
            .with_eta(eta)
            .with_alpha(alpha)
            .with_bounds(bounds)
            .with_epsilon(0.0);
        let adam = OptimizerConfig::new(Algorithm::Adam)
            .with_eta(eta)
            .with_alpha(alpha)
            .with_beta(beta)
            .with_epsilon(0.0);
        match (production_trajectory(&madam, theta0, &grads), production_trajectory(&adam, theta0, &grads)) {
            (Ok(a), Ok(b)) => {
                let err = trajectory_error(&a, &b, theta0);
                report.observe(err);
                report.check(err <= TRAJECTORY_TOLERANCE, || {
                    format!("trace {k}: β={beta}, α={alpha}, η={eta}, g={grads:?}: relative error {err:.3e}")
                });
            }
            (a, b) => report.check(false, || format!("trace {k}: step failed: {:?} / {:?}", a.err(), b.err())),
        }
    }
    report
}

fn gradient_error(analytic: &CoordVector, numeric: &CoordVector) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(GRADIENT_NORM_FLOOR)
}

/// Logistic-regression and MLP gradients against central differences on `n`
/// random instances of each model (random data shape, batch and parameters).
pub fn gradient_suite(n: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Gradients);
    for k in 0..n {
        let mut rng = run_stream(seed, k as u64);
        let config = BlobConfig {
            n_samples: rng.random_range(2..=32),
            n_features: rng.random_range(1..=4),
            separation: rng.random_range(0.0..6.0),
            spread: rng.random_range(0.2..2.0),
            seed: rng.random(),
        };
        let data = BlobDataset::generate(&config).expect("valid blob config");
        let batch: Vec<usize> = (0..rng.random_range(1..=data.len()))
            .map(|_| rng.random_range(0..data.len()))
            .collect();
        let d = data.n_features();

        let params = CoordVector::new((0..logistic_param_len(d)).map(|_| standard_normal(&mut rng)).collect())
            .expect("non-empty");
        match logistic_loss_grad(&params, &data, &batch) {
            Ok((_, analytic)) => {
                let numeric = finite_diff_grad(
                    |p| logistic_loss_grad(p, &data, &batch).map(|r| r.0).unwrap_or(f64::NAN),
                    &params,
                    FD_STEP,
                );
                let err = gradient_error(&analytic, &numeric);
                report.observe(err);
                report.check(err <= GRADIENT_TOLERANCE, || {
                    format!("logistic instance {k} ({config:?}): relative error {err:.3e}")
                });
            }
            Err(e) => report.check(false, || format!("logistic instance {k}: {e}")),
        }

        let shape = MlpShape {
            n_in: d,
            n_hidden: rng.random_range(1..=6),
        };
        let params =
            CoordVector::new((0..shape.len()).map(|_| standard_normal(&mut rng)).collect()).expect("non-empty");
        match mlp_loss_grad(&params, shape, &data, &batch) {
            Ok((_, analytic)) => {
                let numeric = finite_diff_grad(
                    |p| mlp_loss_grad(p, shape, &data, &batch).map(|r| r.0).unwrap_or(f64::NAN),
                    &params,
                    FD_STEP,
                );
                let err = gradient_error(&analytic, &numeric);
                report.observe(err);
                report.check(err <= GRADIENT_TOLERANCE, || {
                    format!("mlp instance {k} ({shape:?}, {config:?}): relative error {err:.3e}")
                });
            }
            Err(e) => report.check(false, || format!("mlp instance {k}: {e}")),
        }
    }
    report
}

/// Steps per seed in [`invariant_suite`] when run through [`Suite::run`].
pub const INVARIANT_STEPS: usize = 1000;

/// MaxVA state-machine, max-tracking and diagnostic invariants over
/// `n_seeds` random trajectories of `n_steps` steps:
///
/// - `w` entrywise nondecreasing and at most 1;
/// - unclipped β inside `[1/(1+w), 1/(1-w)]` whenever the variance and
///   deviation dominate `δ`;
/// - unclipped β equal to `1/(2-β₁)` on the second step;
/// - clipped β inside `[β̲, β̄]`;
/// - unfloored variance estimate at least `-1e-12`;
/// - running max `v̂` entrywise nondecreasing;
/// - cumulative S1 and S2 nondecreasing in harness runs.
pub fn invariant_suite(n_seeds: usize, n_steps: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Invariants);
    for k in 0..n_seeds {
        let mut rng = run_stream(seed, k as u64);
        maxva_invariants(&mut report, &mut rng, k, n_steps);
        max_tracking_invariants(&mut report, &mut rng, k, n_steps);
        diagnostic_invariants(&mut report, &mut rng, seed, k, n_steps);
    }
    report
}

/// Relative slack for the pre-clip range, and the size `Δg² + σ²` must have
/// for the δ guard to be negligible.
const RANGE_SLACK: f64 = 1e-9;
const DELTA_NEGLIGIBLE: f64 = 1e-6;

fn maxva_invariants(report: &mut SuiteReport, rng: &mut RunRng, k: usize, n_steps: usize) {
    let dim = rng.random_range(1..=4);
    let bounds = random_bounds(rng);
    let mut state = MaxVAState::new(dim);
    let streams: Vec<Vec<f64>> = (0..dim).map(|_| gradient_stream(rng, n_steps)).collect();
    for t in 0..n_steps {
        let g = CoordVector::new(streams.iter().map(|s| s[t]).collect()).expect("non-empty");
        if state.t >= 1 {
            let raw = compute_beta_raw(&g, &state, bounds.delta).expect("initialized state");
            let m = bias_corrected(&state).expect("initialized state");
            for i in 0..dim {
                let w = state.w[i];
                let dg2 = (g[i] - m.u[i]).powi(2);
                let s2 = m.sigma_sq[i];
                let b = raw[i];
                if s2 > 0.0 && dg2 + s2 >= DELTA_NEGLIGIBLE {
                    let lo = 1.0 / (1.0 + w);
                    let hi = if w >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - w) };
                    report.check(b >= lo * (1.0 - RANGE_SLACK) && b <= hi * (1.0 + RANGE_SLACK), || {
                        format!("seed {k}, t={}, coord {i}: raw β={b} outside [{lo}, {hi}] (w={w})", t + 1)
                    });
                }
                if state.t == 1 && dg2 >= DELTA_NEGLIGIBLE {
                    let expected = 1.0 / (2.0 - bounds.beta_one);
                    report.check(relative_error(b, expected) <= RANGE_SLACK, || {
                        format!("seed {k}, coord {i}: second-step raw β={b}, expected {expected}")
                    });
                }
            }
        }
        let prev_w = state.w.clone();
        let (beta, next) = maxva_step_beta(&state, &g, &bounds).expect("matching lengths");
        for i in 0..dim {
            // The first step uses β₁ as given, unclipped.
            let in_range = if state.t == 0 {
                beta[i] == bounds.beta_one
            } else {
                beta[i] >= bounds.beta_lower && beta[i] <= bounds.beta_upper
            };
            report.check(in_range, || {
                format!("seed {k}, t={}, coord {i}: clipped β={} outside bounds", t + 1, beta[i])
            });
            report.check(next.w[i] >= prev_w[i] && next.w[i] <= 1.0, || {
                format!("seed {k}, t={}, coord {i}: w went {} -> {}", t + 1, prev_w[i], next.w[i])
            });
        }
        if let Ok(var) = next.sigma_sq_unfloored() {
            for i in 0..dim {
                report.observe((-var[i]).max(0.0));
                report.check(var[i] >= VARIANCE_FLOOR, || {
                    format!("seed {k}, t={}, coord {i}: unfloored σ²={}", t + 1, var[i])
                });
            }
        }
        state = next;
    }
}

fn max_tracking_invariants(report: &mut SuiteReport, rng: &mut RunRng, k: usize, n_steps: usize) {
    let algorithm = [Algorithm::AMSGrad, Algorithm::Adam, Algorithm::MAdam, Algorithm::LaMAdam, Algorithm::LaProp]
        [rng.random_range(0..5)];
    let cfg = random_config(rng, algorithm).with_amsgrad(true).with_weight_decay(0.0);
    let grads = gradient_stream(rng, n_steps);
    let mut theta = CoordVector::scalar(standard_normal(rng));
    let mut state = OptimizerState::new(&cfg, 1);
    for (t, &g) in grads.iter().enumerate() {
        let Ok((next_theta, next_state, _)) = step(&theta, &CoordVector::scalar(g), &state, &cfg) else {
            report.check(false, || format!("seed {k}, {algorithm}: step {} failed", t + 1));
            return;
        };
        let (Some(before), Some(after)) = (&state.v_hat, &next_state.v_hat) else {
            report.check(false, || format!("seed {k}, {algorithm}: running max missing"));
            return;
        };
        report.check(after[0] >= before[0], || {
            format!("seed {k}, {algorithm}, t={}: v̂ decreased {} -> {}", t + 1, before[0], after[0])
        });
        theta = next_theta;
        state = next_state;
    }
}

fn diagnostic_invariants(report: &mut SuiteReport, rng: &mut RunRng, seed: u64, k: usize, n_steps: usize) {
    let algorithm = Algorithm::ALL[rng.random_range(0..Algorithm::ALL.len())];
    let cfg = random_config(rng, algorithm)
        .with_eta(10f64.powf(rng.random_range(-3.0..=-1.0)))
        .with_weight_decay(0.0);
    let problem = if rng.random_bool(0.5) {
        ProblemSpec::FiniteSample(FiniteSampleProblem::default())
    } else {
        let h = CoordVector::new(vec![1.0, rng.random_range(0.01..1.0)]).expect("non-empty");
        ProblemSpec::Nqm(NQMProblem::new(h, rng.random_range(0.0..1.0)).expect("valid NQM"))
    };
    let spec = ExperimentSpec::new(problem, cfg)
        .with_horizon(n_steps as u64)
        .with_seed(seed);
    let rec = run_single(&spec, k);
    for pair in rec.records.windows(2) {
        report.check(pair[1].s1 >= pair[0].s1 && pair[1].s2 >= pair[0].s2, || {
            format!(
                "seed {k}, {algorithm}: S1/S2 decreased at step {} ({} -> {}, {} -> {})",
                pair[1].step, pair[0].s1, pair[1].s1, pair[0].s2, pair[1].s2
            )
        });
    }
}
