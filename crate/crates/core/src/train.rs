//! Parameter initialization, Adam, the learning-rate schedule, and a
//! minibatch loop that is shared by the graph model and the flat baselines.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::c2g::{build_graph, FeatureGraph};
use crate::data::ProcessedRecord;
use crate::error::{Error, Result};
use crate::model::{argmax, loss_and_gradients, CcrGnnConfig, CcrGnnParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Standard deviation of the alternative uniform initializer.
pub const UNIFORM_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `U(±√(6/(fan_in+fan_out)))`.
    XavierUniform,
    /// `U(±0.1·√3)`, i.e. standard deviation 0.1 for every weight.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    /// `lr_k = initial - k·lr_decay`.
    Subtractive,
    /// `lr_k = initial·(1 - lr_decay/initial)^k`; the first step matches the
    /// subtractive schedule.
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub decay: DecayKind,
    pub min_lr: f64,
    pub l2_penalty: f64,
    pub seed: u64,
    pub init: InitKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            initial_lr: 0.001,
            lr_decay: 0.0001,
            decay_every: 3,
            decay: DecayKind::Subtractive,
            min_lr: 1e-5,
            l2_penalty: 1e-5,
            seed: 42,
            init: InitKind::XavierUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config("batch_size and decay_every must be positive".into()));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("initial_lr", self.initial_lr)?;
        positive("min_lr", self.min_lr)?;
        if !(self.lr_decay >= 0.0 && self.l2_penalty >= 0.0) {
            return Err(Error::Config("lr_decay and l2_penalty must be non-negative".into()));
        }
        if self.decay == DecayKind::Multiplicative && self.lr_decay >= self.initial_lr {
            return Err(Error::Config("multiplicative decay needs lr_decay < initial_lr".into()));
        }
        Ok(())
    }
}

/// Learning rate for 0-based `epoch`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let k = (epoch / config.decay_every) as f64;
    let lr = match config.decay {
        DecayKind::Subtractive => config.initial_lr - config.lr_decay * k,
        DecayKind::Multiplicative => {
            config.initial_lr * (1.0 - config.lr_decay / config.initial_lr).powf(k)
        }
    };
    lr.max(config.min_lr)
}

/// Uniform `rows x cols` matrix on `±bound`, drawn row-major.
pub fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let dist = Uniform::new_inclusive(-bound, bound);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

pub fn init_bound(kind: InitKind, fan_in: usize, fan_out: usize) -> f64 {
    match kind {
        InitKind::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        InitKind::Uniform => UNIFORM_INIT_STD * 3f64.sqrt(),
    }
}

/// Weights in declared order; attention vectors use `fan_in = 2·out`,
/// `fan_out = 1`; biases start at zero.
pub fn init_params(config: &CcrGnnConfig, d: usize, seed: u64, kind: InitKind) -> Result<CcrGnnParams> {
    config.validate()?;
    if d == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gat_slots = 2 * config.channels.len();
    let tensors = config
        .param_shapes(d)
        .into_iter()
        .enumerate()
        .map(|(i, (r, c))| {
            if i < gat_slots && i % 2 == 1 {
                uniform_matrix(r, c, init_bound(kind, r, 1), &mut rng)
            } else if i < gat_slots || i % 2 == 0 {
                uniform_matrix(r, c, init_bound(kind, c, r), &mut rng)
            } else {
                Matrix::zeros(r, c)
            }
        })
        .collect();
    CcrGnnParams::from_tensors(config, d, tensors)
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "Adam tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Contract(format!(
                    "tensor {i}: parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
            if let Some(k) = g.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of tensor {i} entry {k} is {} at step {}",
                    g.as_slice()[k],
                    self.t + 1
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (k, theta) in p.as_mut_slice().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Anything the minibatch loop can update.
pub trait ParamSet: Send + Sync {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }
}

impl ParamSet for CcrGnnParams {
    fn tensors(&self) -> Vec<&Matrix> {
        CcrGnnParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        CcrGnnParams::tensors_mut(self)
    }
}

/// Loss, gradients in tensor order, and predicted class for one sample.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub loss: f64,
    pub grads: Vec<Matrix>,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    /// Fraction of samples classified correctly when they were visited.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "lr", "loss", "train_accuracy"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.loss.to_string(),
                r.train_accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Checkpoint(format!("history write failed: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

/// Seeded shuffling, batch gradients averaged in a fixed order, one Adam step
/// per batch. Per-sample gradients are computed in parallel; the reduction is
/// serial, so results do not depend on the thread count.
pub fn train_loop<P, S, F>(
    params: &mut P,
    samples: &[S],
    labels: &[usize],
    config: &TrainConfig,
    sample_grad: F,
) -> Result<History>
where
    P: ParamSet,
    S: Sync,
    F: Fn(&P, &S, usize) -> Result<SampleGrad> + Sync,
{
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    if samples.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let mut adam = AdamState::new(&params.shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = History::default();

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let current = &*params;
            let mut total: Option<Vec<Matrix>> = None;
            // Small parallel groups bound memory; sample order fixes the sum.
            for group in batch.chunks(rayon::current_num_threads().max(1)) {
                let results: Vec<Result<SampleGrad>> = group
                    .par_iter()
                    .map(|&i| sample_grad(current, &samples[i], labels[i]))
                    .collect();
                for (&i, r) in group.iter().zip(results) {
                    let r = r?;
                    if !r.loss.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "loss is {} at epoch {}, sample {i}",
                            r.loss,
                            epoch + 1
                        )));
                    }
                    loss_sum += r.loss;
                    correct += usize::from(r.predicted == labels[i]);
                    match &mut total {
                        None => total = Some(r.grads),
                        Some(acc) => acc.iter_mut().zip(&r.grads).for_each(|(a, g)| a.add_assign(g)),
                    }
                }
            }
            let mut grads = total.expect("batches are non-empty");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale_assign(scale));
            adam.step(params.tensors_mut(), &grads, lr)?;
        }
        let n = samples.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
        };
        log::debug!(
            "epoch {} lr {:.6} loss {:.6} acc {:.4}",
            record.epoch,
            record.lr,
            record.loss,
            record.train_accuracy
        );
        history.epochs.push(record);
    }
    Ok(history)
}

/// Builds every record's graph once, in parallel, preserving order.
pub fn build_graphs(records: &[ProcessedRecord], step: f64) -> Result<Vec<FeatureGraph>> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            build_graph(&r.x, step).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("record {i}: {m}")),
                other => other,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: CcrGnnParams,
    pub history: History,
}

/// Trains from a fresh initialization seeded by `config.seed`.
pub fn fit(train: &[ProcessedRecord], config: &TrainConfig, model: &CcrGnnConfig) -> Result<FitResult> {
    let d = train
        .first()
        .map(|r| r.x.len())
        .ok_or_else(|| Error::Contract("cannot train on an empty dataset".into()))?;
    let params = init_params(model, d, config.seed, config.init)?;
    fit_from(params, train, config, model)
}

/// Continues training from the given parameters.
pub fn fit_from(
    mut params: CcrGnnParams,
    train: &[ProcessedRecord],
    config: &TrainConfig,
    model: &CcrGnnConfig,
) -> Result<FitResult> {
    model.validate()?;
    if let Some(r) = train.iter().find(|r| r.label_index >= model.num_classes) {
        return Err(Error::Validation(format!(
            "label {} exceeds the model's {} classes",
            r.label_index, model.num_classes
        )));
    }
    let graphs = build_graphs(train, model.c2g_step)?;
    let labels: Vec<usize> = train.iter().map(|r| r.label_index).collect();
    let lambda = config.l2_penalty;
    let history = train_loop(&mut params, &graphs, &labels, config, |p, g, label| {
        let (loss, grads, log_probs) = loss_and_gradients(p, model, g, label, lambda)?;
        Ok(SampleGrad {
            loss,
            grads,
            predicted: argmax(&log_probs),
        })
    })?;
    Ok(FitResult { params, history })
}
