//! Desk-scale supervised problems with hand-coded gradients: logistic
//! regression and a one-hidden-layer tanh perceptron on two Gaussian blobs.

use std::io::{Read, Write};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::optimizers::{step, OptimizerConfig, OptimizerState};
use crate::rng::{run_stream, standard_normal, RunRng};
use crate::vecmath::CoordVector;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub n_samples: usize,
    pub n_features: usize,
    /// Distance between the two class means along the all-ones diagonal.
    pub separation: f64,
    /// Per-feature standard deviation around each mean.
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            n_samples: 512,
            n_features: 2,
            separation: 8.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

/// Binary-labelled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobDataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n_features: usize,
    /// Generation parameters; `None` for imported data.
    pub config: Option<BlobConfig>,
}

impl BlobDataset {
    /// Balanced blobs: even rows are class 0, odd rows class 1.
    pub fn generate(config: &BlobConfig) -> Result<Self> {
        if config.n_samples < 2 || config.n_features == 0 {
            return Err(Error::InvalidArgument("need at least 2 samples and 1 feature".into()));
        }
        let mut rng = run_stream(config.seed, 0);
        let offset = config.separation / (2.0 * (config.n_features as f64).sqrt());
        let mut features = Vec::with_capacity(config.n_samples * config.n_features);
        let mut labels = Vec::with_capacity(config.n_samples);
        for k in 0..config.n_samples {
            let label = (k % 2) as f64;
            let center = if label == 1.0 { offset } else { -offset };
            for _ in 0..config.n_features {
                features.push(center + config.spread * standard_normal(&mut rng));
            }
            labels.push(label);
        }
        Ok(Self {
            features,
            labels,
            n_features: config.n_features,
            config: Some(config.clone()),
        })
    }

    pub fn from_parts(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n_features = features.first().map(Vec::len).unwrap_or(0);
        if features.is_empty() || n_features == 0 || features.len() != labels.len() {
            return Err(Error::InvalidArgument("features and labels must be non-empty and aligned".into()));
        }
        if features.iter().any(|r| r.len() != n_features) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self {
            features: features.concat(),
            labels,
            n_features,
            config: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.n_features..(k + 1) * self.n_features]
    }

    pub fn label(&self, k: usize) -> f64 {
        self.labels[k]
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// Header `x0,..,x{d-1},label`, one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.n_features).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec: Vec<String> = self.row(k).iter().map(|x| format!("{x:?}")).collect();
            rec.push(format!("{}", self.labels[k] as u8));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad number in dataset CSV: {e}")))?;
            let (label, row) = vals
                .split_last()
                .ok_or_else(|| Error::InvalidArgument("empty CSV row".into()))?;
            features.push(row.to_vec());
            labels.push(*label);
        }
        Self::from_parts(features, labels)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on the logit: `softplus(z) - y z`.
fn bce(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

fn check_batch(data: &BlobDataset, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&k) = batch.iter().find(|&&k| k >= data.len()) {
        return Err(Error::InvalidArgument(format!("sample index {k} out of range")));
    }
    Ok(())
}

/// Parameter count of logistic regression: weights then bias.
pub fn logistic_param_len(n_features: usize) -> usize {
    n_features + 1
}

/// Mean cross-entropy of `σ(w·x + b)` over the batch and its exact gradient.
pub fn logistic_loss_grad(params: &CoordVector, data: &BlobDataset, batch: &[usize]) -> Result<(f64, CoordVector)> {
    check_batch(data, batch)?;
    let d = data.n_features();
    params.check_len(logistic_param_len(d))?;
    let p = params.as_slice();
    let (w, b) = (&p[..d], p[d]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for &k in batch {
        let x = data.row(k);
        let y = data.label(k);
        let z = b + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        loss += bce(z, y);
        let dz = sigmoid(z) - y;
        for j in 0..d {
            grad[j] += dz * x[j];
        }
        grad[d] += dz;
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, CoordVector::new(grad)?))
}

/// Layout of the flattened MLP parameters:
/// `[W1 (hidden × in, row-major) | b1 (hidden) | w2 (hidden) | b2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub n_in: usize,
    pub n_hidden: usize,
}

/// Unflattened MLP parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MLPParams {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpShape {
    pub fn len(&self) -> usize {
        self.n_hidden * self.n_in + 2 * self.n_hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flatten(&self, p: &MLPParams) -> Result<CoordVector> {
        if p.w1.len() != self.n_hidden
            || p.w1.iter().any(|r| r.len() != self.n_in)
            || p.b1.len() != self.n_hidden
            || p.w2.len() != self.n_hidden
        {
            return Err(Error::InvalidArgument("MLP parameters do not match shape".into()));
        }
        let mut flat = p.w1.concat();
        flat.extend_from_slice(&p.b1);
        flat.extend_from_slice(&p.w2);
        flat.push(p.b2);
        CoordVector::new(flat)
    }

    pub fn unflatten(&self, flat: &CoordVector) -> Result<MLPParams> {
        flat.check_len(self.len())?;
        let f = flat.as_slice();
        let (h, d) = (self.n_hidden, self.n_in);
        Ok(MLPParams {
            w1: f[..h * d].chunks(d).map(<[f64]>::to_vec).collect(),
            b1: f[h * d..h * d + h].to_vec(),
            w2: f[h * d + h..h * d + 2 * h].to_vec(),
            b2: f[h * d + 2 * h],
        })
    }

    /// Small Gaussian initialization, `W1 ~ N(0, 1/n_in)`, `w2 ~ N(0, 1/n_hidden)`, zero biases.
    pub fn init(&self, rng: &mut RunRng) -> CoordVector {
        let s1 = 1.0 / (self.n_in as f64).sqrt();
        let s2 = 1.0 / (self.n_hidden as f64).sqrt();
        let p = MLPParams {
            w1: (0..self.n_hidden)
                .map(|_| (0..self.n_in).map(|_| s1 * standard_normal(rng)).collect())
                .collect(),
            b1: vec![0.0; self.n_hidden],
            w2: (0..self.n_hidden).map(|_| s2 * standard_normal(rng)).collect(),
            b2: 0.0,
        };
        self.flatten(&p).expect("shape-consistent init")
    }
}

/// Mean cross-entropy of `σ(w2 · tanh(W1 x + b1) + b2)` and its exact gradient
/// by backpropagation.
pub fn mlp_loss_grad(
    params: &CoordVector,
    shape: MlpShape,
    data: &BlobDataset,
    batch: &[usize],
) -> Result<(f64, CoordVector)> {
    check_batch(data, batch)?;
    if shape.n_in != data.n_features() {
        return Err(Error::Dimension {
            expected: data.n_features(),
            found: shape.n_in,
        });
    }
    let p = shape.unflatten(params)?;
    let (h, d) = (shape.n_hidden, shape.n_in);
    let mut g_w1 = vec![vec![0.0; d]; h];
    let mut g_b1 = vec![0.0; h];
    let mut g_w2 = vec![0.0; h];
    let mut g_b2 = 0.0;
    let mut loss = 0.0;
    let mut hidden = vec![0.0; h];
    for &k in batch {
        let x = data.row(k);
        let y = data.label(k);
        for j in 0..h {
            let a = p.b1[j] + p.w1[j].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            hidden[j] = a.tanh();
        }
        let z = p.b2 + hidden.iter().zip(&p.w2).map(|(a, b)| a * b).sum::<f64>();
        loss += bce(z, y);
        let dz = sigmoid(z) - y;
        g_b2 += dz;
        for j in 0..h {
            g_w2[j] += dz * hidden[j];
            let da = dz * p.w2[j] * (1.0 - hidden[j] * hidden[j]);
            g_b1[j] += da;
            for (gw, xi) in g_w1[j].iter_mut().zip(x) {
                *gw += da * xi;
            }
        }
    }
    let n = batch.len() as f64;
    let grad = MLPParams {
        w1: g_w1.into_iter().map(|r| r.into_iter().map(|g| g / n).collect()).collect(),
        b1: g_b1.into_iter().map(|g| g / n).collect(),
        w2: g_w2.into_iter().map(|g| g / n).collect(),
        b2: g_b2 / n,
    };
    Ok((loss / n, shape.flatten(&grad)?))
}

/// Endless seeded minibatch stream over `0..n_samples`.
///
/// Fixed mode shuffles once per epoch and yields consecutive chunks of
/// `batch_size` (the last chunk of an epoch may be shorter). Growth mode
/// yields batch `t` of size `min(t, n_samples)`, reshuffling whenever the
/// current permutation cannot supply a full batch.
pub struct MinibatchIter {
    n_samples: usize,
    batch_size: usize,
    growth: bool,
    rng: RunRng,
    order: Vec<usize>,
    cursor: usize,
    t: usize,
}

pub fn minibatch_iter(n_samples: usize, batch_size: usize, rng: RunRng, growth: bool) -> Result<MinibatchIter> {
    if n_samples == 0 || batch_size == 0 || batch_size > n_samples {
        return Err(Error::InvalidArgument(format!(
            "batch size must lie in 1..={n_samples}, got {batch_size}"
        )));
    }
    Ok(MinibatchIter {
        n_samples,
        batch_size,
        growth,
        rng,
        order: (0..n_samples).collect(),
        cursor: n_samples,
        t: 0,
    })
}

impl MinibatchIter {
    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }
}

impl Iterator for MinibatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.t += 1;
        let size = if self.growth {
            self.t.min(self.n_samples)
        } else {
            self.batch_size
        };
        let remaining = self.n_samples - self.cursor;
        if remaining == 0 || (self.growth && remaining < size) {
            self.reshuffle();
        }
        let end = (self.cursor + size).min(self.n_samples);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Logistic,
    Mlp { n_hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: Model,
    pub epochs: usize,
    pub batch_size: usize,
    pub batch_growth: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: Model::Mlp { n_hidden: 8 },
            epochs: 20,
            batch_size: 32,
            batch_growth: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPoint {
    pub step: u64,
    pub batch_loss: f64,
    /// Loss on the whole dataset after the step.
    pub full_loss: f64,
    pub step_size: f64,
}

pub fn loss_grad(model: Model, params: &CoordVector, data: &BlobDataset, batch: &[usize]) -> Result<(f64, CoordVector)> {
    match model {
        Model::Logistic => logistic_loss_grad(params, data, batch),
        Model::Mlp { n_hidden } => mlp_loss_grad(
            params,
            MlpShape {
                n_in: data.n_features(),
                n_hidden,
            },
            data,
            batch,
        ),
    }
}

/// Trains for `epochs × n_samples` sample visits and logs the full-data loss
/// after every step.
pub fn train(data: &BlobDataset, opt: &OptimizerConfig, cfg: &TrainConfig) -> Result<Vec<TrainPoint>> {
    opt.validate()?;
    let mut rng = run_stream(cfg.seed, 0);
    let mut params = match cfg.model {
        Model::Logistic => CoordVector::zeros(logistic_param_len(data.n_features())),
        Model::Mlp { n_hidden } => MlpShape {
            n_in: data.n_features(),
            n_hidden,
        }
        .init(&mut rng),
    };
    let mut state = OptimizerState::new(opt, params.len());
    let batches = minibatch_iter(data.len(), cfg.batch_size, run_stream(cfg.seed, 1), cfg.batch_growth)?;
    let all = data.all_indices();
    let budget = cfg.epochs * data.len();
    let mut seen = 0;
    let mut log = Vec::new();
    for batch in batches {
        if seen >= budget {
            break;
        }
        seen += batch.len();
        let (batch_loss, g) = loss_grad(cfg.model, &params, data, &batch)?;
        let (next, st, report) = step(&params, &g, &state, opt)?;
        params = next;
        state = st;
        let (full_loss, _) = loss_grad(cfg.model, &params, data, &all)?;
        log.push(TrainPoint {
            step: state.t,
            batch_loss,
            full_loss,
            step_size: report.step_size_avg,
        });
    }
    Ok(log)
}

/// Moving average of `full_loss` over a sliding window of `window` steps.
/// Empty when the log is shorter than the window.
pub fn smoothed_loss(log: &[TrainPoint], window: usize) -> Vec<f64> {
    assert!(window > 0);
    log.windows(window)
        .map(|c| c.iter().map(|p| p.full_loss).sum::<f64>() / window as f64)
        .collect()
}

pub fn is_nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Trains once per learning rate and keeps the one with the lowest final
/// full-data loss (ties to the smaller rate). Diverged settings are skipped.
pub fn tune_eta(
    data: &BlobDataset,
    opt: &OptimizerConfig,
    cfg: &TrainConfig,
    etas: &[f64],
) -> Result<(f64, Vec<TrainPoint>)> {
    let mut best: Option<(f64, Vec<TrainPoint>)> = None;
    let mut sorted = etas.to_vec();
    sorted.sort_by(f64::total_cmp);
    for eta in sorted {
        let Ok(log) = train(data, &opt.clone().with_eta(eta), cfg) else {
            continue;
        };
        let Some(last) = log.last().map(|p| p.full_loss) else {
            continue;
        };
        if !last.is_finite() {
            continue;
        }
        if best
            .as_ref()
            .is_none_or(|(_, b)| last < b.last().map(|p| p.full_loss).unwrap_or(f64::INFINITY))
        {
            best = Some((eta, log));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no learning rate produced a finite run".into()))
}
