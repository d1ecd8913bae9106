//! Seeded multi-run experiments.
//!
//! Run `r` draws all of its randomness (initialization, sampled components,
//! gradient noise) from [`run_stream`]`(master_seed, r)`, which does not depend
//! on the optimizer. Different optimizer configs therefore see the same
//! initial points and noise for the same run index, and results do not depend
//! on thread scheduling.
//!
//! Diagnostics per step `t`, with `v_t` the bias-corrected second moment in the
//! denominator (`v̂_t` under max-tracking):
//!
//! - `S1 = Σ_t ‖g_t/√v_t‖²`
//! - `S2 = Σ_t ‖1/√v_t - 1/√v_{t-1}‖₁`, whose `t = 1` term is 0.
//!
//! Coordinates with `v = 0` contribute nothing to either sum.

use rayon::prelude::*;

use crate::error::Result;
use crate::optimizers::{step, OptimizerConfig, OptimizerState};
use crate::problems::{FiniteSampleProblem, NQMProblem, Problem};
use crate::rng::run_stream;
use crate::vecmath::{norm_sq, CoordVector};

/// Runs whose parameters exceed this magnitude are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    FiniteSample(FiniteSampleProblem),
    Nqm(NQMProblem),
}

impl ProblemSpec {
    pub fn as_problem(&self) -> &dyn Problem {
        match self {
            ProblemSpec::FiniteSample(p) => p,
            ProblemSpec::Nqm(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerConfig,
    pub n_runs: usize,
    pub horizon: u64,
    pub master_seed: u64,
    pub record_every: u64,
}

impl ExperimentSpec {
    pub fn new(problem: ProblemSpec, optimizer: OptimizerConfig) -> Self {
        Self {
            problem,
            optimizer,
            n_runs: 100,
            horizon: 1000,
            master_seed: 0,
            record_every: 1,
        }
    }

    pub fn with_runs(mut self, n_runs: usize) -> Self {
        self.n_runs = n_runs;
        self
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_record_every(mut self, record_every: u64) -> Self {
        self.record_every = record_every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.n_runs == 0 || self.horizon == 0 || self.record_every == 0 {
            return Err(Error::InvalidArgument(
                "n_runs, horizon and record_every must all be at least 1".into(),
            ));
        }
        self.optimizer.validate()
    }

    fn records_at(&self, t: u64) -> bool {
        t % self.record_every == 0 || t == self.horizon
    }

    /// Steps at which a run that never fails records diagnostics.
    pub fn record_steps(&self) -> Vec<u64> {
        (1..=self.horizon).filter(|&t| self.records_at(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub s1: f64,
    pub s2: f64,
    pub step_size: f64,
    pub beta_mean: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// `‖θ‖₂`, i.e. `|θ|` for scalar problems.
    pub abs_theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_index: usize,
    pub records: Vec<StepRecord>,
    /// Last finite iterate.
    pub final_theta: CoordVector,
    /// Step at which the run diverged, if it did.
    pub failed_at: Option<u64>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.failed_at.is_some()
    }

    pub fn final_abs_theta(&self) -> f64 {
        norm_sq(&self.final_theta).sqrt()
    }
}

fn inverse_sqrt(v: f64) -> Option<f64> {
    (v > 0.0).then(|| 1.0 / v.sqrt())
}

/// Executes one run of `spec` on its own random stream.
pub fn run_single(spec: &ExperimentSpec, run_index: usize) -> RunRecord {
    let problem = spec.problem.as_problem();
    let cfg = &spec.optimizer;
    let mut rng = run_stream(spec.master_seed, run_index as u64);
    let mut theta = problem.initial_theta(&mut rng);
    let mut state = OptimizerState::new(cfg, problem.dim());
    let mut prev_v: Option<CoordVector> = None;
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut records = Vec::with_capacity((spec.horizon / spec.record_every) as usize + 1);
    let mut failed_at = None;

    for t in 1..=spec.horizon {
        let outcome = problem
            .sample_grad(&theta, &mut rng)
            .and_then(|g| step(&theta, &g, &state, cfg).map(|r| (g, r)));
        let (g, (next_theta, next_state, report)) = match outcome {
            Ok(x) => x,
            Err(_) => {
                failed_at = Some(t);
                break;
            }
        };
        if next_theta.iter().any(|x| x.abs() > DIVERGENCE_LIMIT) {
            failed_at = Some(t);
            break;
        }

        let v = &report.v_effective;
        s1 += g
            .iter()
            .zip(v)
            .filter_map(|(gi, &vi)| inverse_sqrt(vi).map(|r| (gi * r).powi(2)))
            .sum::<f64>();
        if let Some(pv) = &prev_v {
            s2 += v
                .iter()
                .zip(pv)
                .filter_map(|(&a, &b)| Some((inverse_sqrt(a)? - inverse_sqrt(b)?).abs()))
                .sum::<f64>();
        }

        theta = next_theta;
        state = next_state;
        prev_v = Some(report.v_effective.clone());

        if spec.records_at(t) {
            let loss = problem.loss(&theta);
            if !loss.is_finite() {
                failed_at = Some(t);
                break;
            }
            records.push(StepRecord {
                step: t,
                loss,
                s1,
                s2,
                step_size: report.step_size_avg,
                beta_mean: report.beta_used.mean(),
                beta_min: report.beta_used.min(),
                beta_max: report.beta_used.max(),
                abs_theta: norm_sq(&theta).sqrt(),
            });
        }
    }

    RunRecord {
        run_index,
        records,
        final_theta: theta,
        failed_at,
    }
}

/// Pointwise summary of one series across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub median: f64,
    /// Sample standard deviation over `√n`; 0 when `n = 1`.
    pub stderr: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl SeriesStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            median: quantile_sorted(&sorted, 0.5),
            stderr: stderr(values),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
            min: sorted.first().copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            if sorted[lo] == sorted[hi] {
                sorted[lo]
            } else {
                sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
            }
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

pub fn stderr(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    // Shifted by the first value so identical inputs give exactly zero.
    let shift = values[0];
    let mean = values.iter().map(|x| x - shift).sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub step: u64,
    /// Runs with a record at this step.
    pub n_present: usize,
    /// Runs that had diverged at or before this step.
    pub n_failed: usize,
    pub loss: SeriesStats,
    pub s1: SeriesStats,
    pub s2: SeriesStats,
    pub step_size: SeriesStats,
    pub beta_mean: SeriesStats,
    pub beta_min: SeriesStats,
    pub beta_max: SeriesStats,
    pub abs_theta: SeriesStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub rows: Vec<AggregateRow>,
}

impl AggregateRecord {
    /// One row per recorded step. Steps after every run has diverged keep a
    /// row with `n_present = 0` and NaN statistics.
    pub fn from_runs(spec: &ExperimentSpec, runs: &[RunRecord]) -> Self {
        let rows = spec
            .record_steps()
            .into_iter()
            .enumerate()
            .map(|(k, step)| {
                let present: Vec<&StepRecord> = runs.iter().filter_map(|r| r.records.get(k)).collect();
                let stats = |f: fn(&StepRecord) -> f64| {
                    SeriesStats::from_values(&present.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                AggregateRow {
                    step,
                    n_present: present.len(),
                    n_failed: runs.iter().filter(|r| r.failed_at.is_some_and(|f| f <= step)).count(),
                    loss: stats(|r| r.loss),
                    s1: stats(|r| r.s1),
                    s2: stats(|r| r.s2),
                    step_size: stats(|r| r.step_size),
                    beta_mean: stats(|r| r.beta_mean),
                    beta_min: stats(|r| r.beta_min),
                    beta_max: stats(|r| r.beta_max),
                    abs_theta: stats(|r| r.abs_theta),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn last(&self) -> Option<&AggregateRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub aggregate: AggregateRecord,
    pub runs: Vec<RunRecord>,
}

impl ExperimentResult {
    pub fn n_failed(&self) -> usize {
        self.runs.iter().filter(|r| r.failed()).count()
    }

    /// Final-step loss per run, `+∞` for diverged runs.
    pub fn final_losses(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| match (r.failed(), r.records.last()) {
                (false, Some(rec)) => rec.loss,
                _ => f64::INFINITY,
            })
            .collect()
    }

    pub fn final_median_loss(&self) -> f64 {
        median(&self.final_losses())
    }

    /// Standard error of the final loss over non-diverged runs.
    pub fn final_stderr_loss(&self) -> f64 {
        let finite: Vec<f64> = self.final_losses().into_iter().filter(|x| x.is_finite()).collect();
        stderr(&finite)
    }

    /// Fraction of runs whose last iterate satisfies `‖θ‖ < threshold`.
    pub fn convergence_fraction(&self, threshold: f64) -> f64 {
        let hits = self
            .runs
            .iter()
            .filter(|r| !r.failed() && r.final_abs_theta() < threshold)
            .count();
        hits as f64 / self.runs.len() as f64
    }
}

/// Runs every seed of `spec` (in parallel on the current rayon pool) and
/// aggregates them in run-index order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let runs: Vec<RunRecord> = (0..spec.n_runs).into_par_iter().map(|r| run_single(spec, r)).collect();
    let aggregate = AggregateRecord::from_runs(spec, &runs);
    Ok(ExperimentResult { aggregate, runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub eta: f64,
    /// Fixed second-moment β, when the sweep varies it.
    pub beta: Option<f64>,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub best: usize,
}

impl SweepResult {
    pub fn best_entry(&self) -> &SweepEntry {
        &self.entries[self.best]
    }
}

/// Grid search over constant learning rates (and optionally fixed β). The best
/// entry has the lowest final-step median loss; ties go to the smaller η, then
/// to the smaller β.
pub fn lr_sweep(spec: &ExperimentSpec, etas: &[f64], betas: Option<&[f64]>) -> Result<SweepResult> {
    use crate::error::Error;
    if etas.is_empty() || betas.is_some_and(|b| b.is_empty()) {
        return Err(Error::InvalidArgument("sweep grids must be non-empty".into()));
    }
    let mut entries = Vec::new();
    for &eta in etas {
        let beta_grid: Vec<Option<f64>> = match betas {
            Some(bs) => bs.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        for beta in beta_grid {
            let mut s = spec.clone();
            s.optimizer = s.optimizer.with_eta(eta);
            if let Some(b) = beta {
                s.optimizer = s.optimizer.with_beta(b);
            }
            let result = run_experiment(&s)?;
            entries.push(SweepEntry { eta, beta, result });
        }
    }
    let key = |e: &SweepEntry| (e.result.final_median_loss(), e.eta, e.beta.unwrap_or(0.0));
    let best = (0..entries.len())
        .min_by(|&a, &b| {
            let (ka, kb) = (key(&entries[a]), key(&entries[b]));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
        })
        .expect("non-empty grid");
    Ok(SweepResult { entries, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::Algorithm;

    fn counterexample(alg: Algorithm, eta: f64) -> ExperimentSpec {
        let cfg = OptimizerConfig::new(alg).with_eta(eta).with_alpha(0.0).with_beta(0.9);
        ExperimentSpec::new(ProblemSpec::FiniteSample(FiniteSampleProblem::default()), cfg)
            .with_runs(4)
            .with_horizon(200)
            .with_seed(3)
    }

    #[test]
    fn quantiles_and_stderr() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(stderr(&[5.0]), 0.0);
        assert_eq!(stderr(&[2.0, 2.0, 2.0]), 0.0);
        // sd of {1,2,3} is 1.
        assert!((stderr(&[1.0, 2.0, 3.0]) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let s = SeriesStats::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!((s.q1, s.median, s.q3, s.min, s.max), (2.0, 3.0, 4.0, 1.0, 5.0));
    }

    #[test]
    fn run_single_is_deterministic() {
        let spec = counterexample(Algorithm::MAdam, 1.2);
        assert_eq!(run_single(&spec, 2), run_single(&spec, 2));
        assert_ne!(run_single(&spec, 2), run_single(&spec, 3));
    }

    #[test]
    fn first_step_s1_is_dimension() {
        let h = CoordVector::new(vec![1.0, 0.3, 2.0]).unwrap();
        let problem = ProblemSpec::Nqm(NQMProblem::new(h, 1.0).unwrap());
        for alg in [Algorithm::Adam, Algorithm::MAdam, Algorithm::AMSGrad] {
            let cfg = OptimizerConfig::new(alg).with_epsilon(0.0);
            let spec = ExperimentSpec::new(problem.clone(), cfg).with_runs(1).with_horizon(1);
            let rec = run_single(&spec, 0);
            assert!((rec.records[0].s1 - 3.0).abs() < 1e-12, "{alg}");
            assert_eq!(rec.records[0].s2, 0.0);
        }
    }

    #[test]
    fn single_run_aggregate() {
        let spec = counterexample(Algorithm::Adam, 0.1).with_runs(1);
        let res = run_experiment(&spec).unwrap();
        for (row, rec) in res.aggregate.rows.iter().zip(&res.runs[0].records) {
            assert_eq!(row.loss.median, rec.loss);
            assert_eq!(row.loss.stderr, 0.0);
        }
    }

    #[test]
    fn identical_runs_have_zero_stderr() {
        let h = CoordVector::new(vec![1.0, 0.1]).unwrap();
        let theta0 = CoordVector::new(vec![1.0, -1.0]).unwrap();
        let p = NQMProblem::new(h, 0.0)
            .unwrap()
            .with_init(crate::problems::NqmInit::Fixed(theta0));
        let spec = ExperimentSpec::new(ProblemSpec::Nqm(p), OptimizerConfig::new(Algorithm::MAdam).with_eta(0.01))
            .with_runs(5)
            .with_horizon(50);
        let res = run_experiment(&spec).unwrap();
        assert!(res.aggregate.rows.iter().all(|r| r.loss.stderr == 0.0 && r.s1.stderr == 0.0));
    }

    #[test]
    fn record_every_thins_the_series() {
        let spec = counterexample(Algorithm::Adam, 0.1).with_horizon(25).with_record_every(10);
        assert_eq!(spec.record_steps(), vec![10, 20, 25]);
        let rec = run_single(&spec, 0);
        assert_eq!(rec.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![10, 20, 25]);
    }

    #[test]
    fn divergence_is_flagged_not_fatal() {
        let h = CoordVector::new(vec![1.0]).unwrap();
        let p = NQMProblem::new(h, 0.0)
            .unwrap()
            .with_init(crate::problems::NqmInit::Fixed(CoordVector::scalar(1.0)));
        // Plain gradient descent with η h = 3 oscillates with growing amplitude.
        let cfg = OptimizerConfig::new(Algorithm::Sgd).with_eta(3.0).with_momentum(0.0);
        let spec = ExperimentSpec::new(ProblemSpec::Nqm(p), cfg).with_runs(2).with_horizon(200);
        let res = run_experiment(&spec).unwrap();
        assert_eq!(res.n_failed(), 2);
        assert!(res.runs[0].failed_at.unwrap() < 200);
        assert!(res.final_median_loss().is_infinite());
        let last = res.aggregate.last().unwrap();
        assert_eq!(last.n_failed, 2);
    }

    #[test]
    fn sweep_passthrough_and_ties() {
        let spec = counterexample(Algorithm::Adam, 0.1);
        let single = lr_sweep(&spec, &[0.3], None).unwrap();
        assert_eq!(single.entries.len(), 1);
        assert_eq!(single.best, 0);
        let mut direct = spec.clone();
        direct.optimizer = direct.optimizer.with_eta(0.3);
        assert_eq!(single.best_entry().result, run_experiment(&direct).unwrap());

        // Zero-gradient problem: every η gives identical loss; smallest η wins.
        let p = NQMProblem::new(CoordVector::new(vec![1.0]).unwrap(), 0.0)
            .unwrap()
            .with_init(crate::problems::NqmInit::Fixed(CoordVector::scalar(0.0)));
        let spec = ExperimentSpec::new(ProblemSpec::Nqm(p), OptimizerConfig::new(Algorithm::Adam))
            .with_runs(2)
            .with_horizon(5);
        let res = lr_sweep(&spec, &[0.5, 0.1, 0.3], Some(&[0.9, 0.5])).unwrap();
        assert_eq!(res.entries.len(), 6);
        let best = res.best_entry();
        assert_eq!((best.eta, best.beta), (0.1, Some(0.5)));
        assert!(lr_sweep(&spec, &[], None).is_err());
    }
}
