//! CSV emission. Every file starts with one `#` line holding the command
//! line that produced it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use maxva_lab::harness::{AggregateRecord, RunRecord};

pub const AGGREGATE_HEADER: [&str; 10] = [
    "step",
    "median_loss",
    "stderr_loss",
    "median_s1",
    "median_s2",
    "median_step_size",
    "beta_mean",
    "beta_min",
    "beta_max",
    "n_failed",
];

pub const RUN_HEADER: [&str; 10] = [
    "run_id",
    "step",
    "loss",
    "s1",
    "s2",
    "step_size",
    "beta_mean",
    "beta_min",
    "beta_max",
    "abs_theta",
];

pub fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Opens `path`, writes the comment line, and hands a CSV writer to `body`.
pub fn write_csv<F>(path: &Path, comment: &str, body: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut BufWriter<File>>) -> Result<()>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# {comment}")?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        body(&mut w)?;
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

/// Per-step aggregate: medians across runs, except `beta_min`/`beta_max`,
/// which are the extremes over all runs.
pub fn write_aggregate(path: &Path, comment: &str, agg: &AggregateRecord) -> Result<()> {
    write_csv(path, comment, |w| {
        w.write_record(AGGREGATE_HEADER)?;
        for r in &agg.rows {
            w.write_record([
                r.step.to_string(),
                num(r.loss.median),
                num(r.loss.stderr),
                num(r.s1.median),
                num(r.s2.median),
                num(r.step_size.median),
                num(r.beta_mean.median),
                num(r.beta_min.min),
                num(r.beta_max.max),
                r.n_failed.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_runs(path: &Path, comment: &str, runs: &[RunRecord]) -> Result<()> {
    write_csv(path, comment, |w| {
        w.write_record(RUN_HEADER)?;
        for run in runs {
            for r in &run.records {
                w.write_record([
                    run.run_index.to_string(),
                    r.step.to_string(),
                    num(r.loss),
                    num(r.s1),
                    num(r.s2),
                    num(r.step_size),
                    num(r.beta_mean),
                    num(r.beta_min),
                    num(r.beta_max),
                    num(r.abs_theta),
                ])?;
            }
        }
        Ok(())
    })
}
