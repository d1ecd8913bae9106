use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maxva_lab::harness::{lr_sweep, run_experiment, ExperimentResult, ExperimentSpec, ProblemSpec};
use maxva_lab::problems::{FiniteSampleProblem, NQMProblem, NqmInit};
use maxva_lab::toyml::{is_nonincreasing, smoothed_loss, train, tune_eta, BlobConfig, BlobDataset, Model, TrainConfig};
use maxva_lab::verify::Suite;
use maxva_lab::{Algorithm, BetaBounds, CoordVector, OptimizerConfig};

use crate::config::ConfigFile;
use crate::output::{command_line, write_aggregate, write_csv, write_runs};
use crate::{CommonArgs, CounterexampleArgs, NqmArgs, OptimizerArgs, RunArgs, ToymlArgs, VerifyArgs};

/// `|θ_T|` below this counts as converged on the counterexample.
const CONVERGED: f64 = 0.1;

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

struct Common {
    seed: u64,
    jobs: Option<usize>,
    out: PathBuf,
}

fn common(c: &CommonArgs, cfg: &ConfigFile) -> Result<Common> {
    let out = cfg.pick_or(c.out.clone(), "out", PathBuf::from("."))?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(Common {
        seed: cfg.pick_or(c.seed, "seed", 0)?,
        jobs: cfg.pick(c.jobs, "jobs")?,
        out,
    })
}

fn runs_and_steps(r: &RunArgs, cfg: &ConfigFile, runs: usize, steps: u64) -> Result<(usize, u64)> {
    Ok((cfg.pick_or(r.runs, "runs", runs)?, cfg.pick_or(r.steps, "steps", steps)?))
}

/// Optimizer flags after merging with the config file.
struct Overrides {
    optimizer: Option<Algorithm>,
    eta: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    beta_lower: Option<f64>,
    beta_upper: Option<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    weight_decay: Option<f64>,
    amsgrad: bool,
}

impl Overrides {
    fn resolve(a: &OptimizerArgs, cfg: &ConfigFile) -> Result<Self> {
        let name: Option<String> = cfg.pick(a.optimizer.clone(), "optimizer")?;
        Ok(Self {
            optimizer: name.map(|n| n.parse::<Algorithm>()).transpose()?,
            eta: cfg.pick(a.eta, "eta")?,
            alpha: cfg.pick(a.alpha, "alpha")?,
            beta: cfg.pick(a.beta, "beta")?,
            beta_lower: cfg.pick(a.beta_lower, "beta-lower")?,
            beta_upper: cfg.pick(a.beta_upper, "beta-upper")?,
            epsilon: cfg.pick(a.epsilon, "epsilon")?,
            delta: cfg.pick(a.delta, "delta")?,
            weight_decay: cfg.pick(a.weight_decay, "weight-decay")?,
            amsgrad: cfg.switch(a.amsgrad, "amsgrad")?,
        })
    }

    /// Applies every override except η on top of `base`.
    fn apply(&self, base: OptimizerConfig, bounds: (f64, f64)) -> Result<OptimizerConfig> {
        let mut c = base;
        if let Some(x) = self.alpha {
            c = c.with_alpha(x);
        }
        if let Some(x) = self.beta {
            c = c.with_beta(x);
        }
        if let Some(x) = self.epsilon {
            c = c.with_epsilon(x);
        }
        if let Some(x) = self.weight_decay {
            c = c.with_weight_decay(x);
        }
        let mut b = BetaBounds::new(self.beta_lower.unwrap_or(bounds.0), self.beta_upper.unwrap_or(bounds.1))?;
        if let Some(d) = self.delta {
            b = b.with_delta(d)?;
        }
        c = c.with_bounds(b);
        if self.amsgrad {
            c = c.with_amsgrad(true);
        }
        c.validate()?;
        Ok(c)
    }
}

fn csv_path(out: &Path, name: &str) -> PathBuf {
    out.join(format!("{name}.csv"))
}

pub fn counterexample(a: CounterexampleArgs) -> Result<bool> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let c = common(&a.common, &cfg)?;
    let (runs, steps) = runs_and_steps(&a.run, &cfg, 100, 100_000)?;
    let theta0 = cfg.pick_or(a.theta0, "theta0", 1.0)?;
    let record_every = cfg.pick_or(a.record_every, "record-every", (steps / 1000).max(1))?;
    let per_run = cfg.switch(a.per_run, "per-run")?;
    let ov = Overrides::resolve(&a.opt, &cfg)?;
    cfg.check_all_used()?;

    let lineup: Vec<(Algorithm, f64)> = match ov.optimizer {
        Some(alg) => vec![(alg, if alg.uses_maxva() { 1.2 } else { 0.8 })],
        None => vec![(Algorithm::MAdam, 1.2), (Algorithm::AMSGrad, 0.8), (Algorithm::Adam, 0.8)],
    };
    let comment = command_line();
    let mut failed = 0;
    for (alg, default_eta) in lineup {
        let base = OptimizerConfig::new(alg).with_alpha(0.0).with_beta(0.9);
        let eta = ov.eta.unwrap_or(default_eta);
        let opt = ov.apply(base, (0.5, 1.0))?.with_eta(eta);
        let spec = ExperimentSpec::new(ProblemSpec::FiniteSample(FiniteSampleProblem { theta0 }), opt)
            .with_runs(runs)
            .with_horizon(steps)
            .with_seed(c.seed)
            .with_record_every(record_every);
        let result = with_pool(c.jobs, || run_experiment(&spec))??;
        let name = format!("counterexample_{alg}");
        write_aggregate(&csv_path(&c.out, &name), &comment, &result.aggregate)?;
        if per_run {
            write_runs(&csv_path(&c.out, &format!("{name}_runs")), &comment, &result.runs)?;
        }
        let last = result.aggregate.last();
        println!(
            "{alg} η={eta}: converged {:.2} (|θ_T| < {CONVERGED}), final median f {:e}, S1 {:e}, S2 {:e}, failed runs {}",
            result.convergence_fraction(CONVERGED),
            result.final_median_loss(),
            last.map_or(f64::NAN, |r| r.s1.median),
            last.map_or(f64::NAN, |r| r.s2.median),
            result.n_failed()
        );
        failed += result.n_failed();
    }
    Ok(failed == 0)
}

/// Learning rates `10^(k/4)` for `k = -16..=0`.
pub fn default_nqm_etas() -> Vec<f64> {
    (-16..=0).map(|k| 10f64.powf(k as f64 / 4.0)).collect()
}

pub const DEFAULT_NQM_BETAS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.99];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

struct Best {
    alg: Algorithm,
    eta: f64,
    beta: Option<f64>,
    result: ExperimentResult,
}

pub fn nqm(a: NqmArgs) -> Result<bool> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let c = common(&a.common, &cfg)?;
    let (runs, steps) = runs_and_steps(&a.run, &cfg, 100, 1000)?;
    let h = cfg.pick_list(a.h.clone(), "h")?.unwrap_or_else(|| vec![1.0, 0.1]);
    let sigma = cfg.pick_or(a.sigma, "sigma", 1.0)?;
    let etas = cfg.pick_list(a.etas.clone(), "etas")?.unwrap_or_else(default_nqm_etas);
    let betas = cfg.pick_list(a.betas.clone(), "betas")?.unwrap_or_else(|| DEFAULT_NQM_BETAS.to_vec());
    let record_every = cfg.pick_or(a.record_every, "record-every", (steps / 100).max(1))?;
    let per_run = cfg.switch(a.per_run, "per-run")?;
    let ov = Overrides::resolve(&a.opt, &cfg)?;
    cfg.check_all_used()?;

    let problem = NQMProblem::new(CoordVector::new(h)?, sigma)?.with_init(NqmInit::StandardNormal);
    let etas = ov.eta.map_or(etas, |e| vec![e]);
    let lineup = ov.optimizer.map_or(vec![Algorithm::MAdam, Algorithm::Adam], |alg| vec![alg]);
    let comment = command_line();
    let mut failed = 0;
    let mut best = Vec::new();
    let mut sweep_rows = Vec::new();

    for alg in lineup {
        let opt = ov.apply(OptimizerConfig::new(alg), (0.5, 0.99))?;
        let beta_grid = match (alg.uses_maxva() || alg == Algorithm::Sgd, ov.beta) {
            (true, _) => None,
            (false, Some(b)) => Some(vec![b]),
            (false, None) => Some(betas.clone()),
        };
        // Sweep on final values only, then rerun the winner with the full record.
        let spec = ExperimentSpec::new(ProblemSpec::Nqm(problem.clone()), opt)
            .with_runs(runs)
            .with_horizon(steps)
            .with_seed(c.seed)
            .with_record_every(steps);
        let sweep = with_pool(c.jobs, || lr_sweep(&spec, &etas, beta_grid.as_deref()))??;
        for e in &sweep.entries {
            failed += e.result.n_failed();
            sweep_rows.push([
                alg.to_string(),
                format!("{:e}", e.eta),
                e.beta.map_or(String::new(), |b| format!("{b:e}")),
                format!("{:e}", e.result.final_median_loss()),
                format!("{:e}", e.result.final_stderr_loss()),
                format!("{:e}", mean(&e.result.final_losses())),
                e.result.n_failed().to_string(),
            ]);
        }
        let w = sweep.best_entry();
        let mut detailed = spec.clone().with_record_every(record_every);
        detailed.optimizer = detailed.optimizer.with_eta(w.eta);
        if let Some(b) = w.beta {
            detailed.optimizer = detailed.optimizer.with_beta(b);
        }
        let result = with_pool(c.jobs, || run_experiment(&detailed))??;
        let name = format!("nqm_{alg}_best");
        write_aggregate(&csv_path(&c.out, &name), &comment, &result.aggregate)?;
        if per_run {
            write_runs(&csv_path(&c.out, &format!("{name}_runs")), &comment, &result.runs)?;
        }
        best.push(Best {
            alg,
            eta: w.eta,
            beta: w.beta,
            result,
        });
    }

    write_csv(&csv_path(&c.out, "nqm_sweep"), &comment, |w| {
        w.write_record(["optimizer", "eta", "beta", "median_loss", "stderr_loss", "mean_loss", "n_failed"])?;
        for r in &sweep_rows {
            w.write_record(r)?;
        }
        Ok(())
    })?;

    println!("{:<10} {:>10} {:>6} {:>14} {:>12} {:>14}", "optimizer", "eta", "beta", "median_excess", "stderr", "mean_excess");
    for b in &best {
        println!(
            "{:<10} {:>10.3e} {:>6} {:>14.4e} {:>12.4e} {:>14.4e}",
            b.alg.to_string(),
            b.eta,
            b.beta.map_or("-".to_string(), |x| x.to_string()),
            b.result.final_median_loss(),
            b.result.final_stderr_loss(),
            mean(&b.result.final_losses())
        );
    }
    let find = |alg| best.iter().find(|b| b.alg == alg);
    if let (Some(m), Some(ad)) = (find(Algorithm::MAdam), find(Algorithm::Adam)) {
        println!(
            "madam/adam: median ratio {:.3}, mean ratio {:.3}",
            m.result.final_median_loss() / ad.result.final_median_loss(),
            mean(&m.result.final_losses()) / mean(&ad.result.final_losses())
        );
    }
    Ok(failed == 0)
}

fn parse_model(name: &str, hidden: usize) -> Result<Model> {
    match name.to_ascii_lowercase().as_str() {
        "logistic" => Ok(Model::Logistic),
        "mlp" => Ok(Model::Mlp { n_hidden: hidden }),
        other => bail!("unknown model '{other}' (expected logistic or mlp)"),
    }
}

/// Learning rates `10^(k/4)` for `k = -12..=0`.
pub fn default_toyml_etas() -> Vec<f64> {
    (-12..=0).map(|k| 10f64.powf(k as f64 / 4.0)).collect()
}

pub fn toyml(a: ToymlArgs) -> Result<bool> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let c = common(&a.common, &cfg)?;
    let defaults = TrainConfig::default();
    let hidden = cfg.pick_or(a.hidden, "hidden", 8)?;
    let model = parse_model(&cfg.pick_or(a.model.clone(), "model", "mlp".to_string())?, hidden)?;
    let train_cfg = TrainConfig {
        model,
        epochs: cfg.pick_or(a.epochs, "epochs", defaults.epochs)?,
        batch_size: cfg.pick_or(a.batch_size, "batch-size", defaults.batch_size)?,
        batch_growth: cfg.switch(a.batch_growth, "batch-growth")?,
        seed: c.seed,
    };
    let data = BlobDataset::generate(&BlobConfig {
        n_samples: cfg.pick_or(a.samples, "samples", BlobConfig::default().n_samples)?,
        seed: c.seed,
        ..BlobConfig::default()
    })?;
    let window = cfg.pick_or(a.window, "window", 50)?;
    if window == 0 {
        bail!("--window must be at least 1");
    }
    let ov = Overrides::resolve(&a.opt, &cfg)?;
    cfg.check_all_used()?;

    let lineup = ov.optimizer.map_or(Algorithm::ALL.to_vec(), |alg| vec![alg]);
    let comment = command_line();
    let mut ok = true;
    for alg in lineup {
        let opt = ov.apply(OptimizerConfig::new(alg), (0.5, 0.999))?;
        let outcome = with_pool(c.jobs, || match ov.eta {
            Some(eta) => train(&data, &opt.clone().with_eta(eta), &train_cfg).map(|log| (eta, log)),
            None => tune_eta(&data, &opt, &train_cfg, &default_toyml_etas()),
        })?;
        let (eta, log) = match outcome {
            Ok(x) => x,
            Err(e) => {
                println!("{alg}: failed: {e}");
                ok = false;
                continue;
            }
        };
        let smooth = smoothed_loss(&log, window);
        write_csv(&csv_path(&c.out, &format!("toyml_{alg}")), &comment, |w| {
            w.write_record(["step", "batch_loss", "full_loss", "smoothed_loss", "step_size"])?;
            for (k, p) in log.iter().enumerate() {
                let s = (k + 1).checked_sub(window).map_or(String::new(), |j| format!("{:e}", smooth[j]));
                w.write_record([
                    p.step.to_string(),
                    format!("{:e}", p.batch_loss),
                    format!("{:e}", p.full_loss),
                    s,
                    format!("{:e}", p.step_size),
                ])?;
            }
            Ok(())
        })?;
        println!(
            "{alg} η={eta:e}: {} steps, final loss {:e}, {window}-step moving average nonincreasing: {}",
            log.len(),
            log.last().map_or(f64::NAN, |p| p.full_loss),
            if smooth.is_empty() { "n/a".to_string() } else { is_nonincreasing(&smooth).to_string() }
        );
    }
    Ok(ok)
}

pub fn verify(a: VerifyArgs) -> Result<bool> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let seed = cfg.pick_or(a.seed, "seed", 0)?;
    let jobs = cfg.pick(a.jobs, "jobs")?;
    let which = cfg.pick_or(a.suite.clone(), "suite", "all".to_string())?;
    let n = cfg.pick(a.n, "n")?;
    cfg.check_all_used()?;
    let suites = if which == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![which.parse::<Suite>()?]
    };
    let mut all_passed = true;
    for suite in suites {
        let cases = n.unwrap_or(suite.default_n());
        let report = with_pool(jobs, || suite.run(cases, seed))?;
        println!("{report}");
        for f in &report.failures {
            println!("  {f}");
        }
        all_passed &= report.passed();
    }
    Ok(all_passed)
}
