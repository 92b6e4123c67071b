//! Full network: feature graph → stacked GAT layers with pooling → local and
//! global readout → MLP → log-probabilities, and the training loss.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::c2g::{build_graph, FeatureGraph, DEFAULT_STEP};
use crate::data::ProcessedRecord;
use crate::error::{Error, Result};
use crate::gat::{gat_layer_on_tape, pool_on_tape, GatLayerParams, LayerVars, PoolKind, DEFAULT_NEGATIVE_SLOPE};

/// Probabilities entering the logarithms of the binary cross-entropy are
/// clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Per-class binary cross-entropy summed over classes.
    Bce,
    /// Negative log-likelihood of the true class.
    CategoricalCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcrGnnConfig {
    /// Output width of each GAT layer.
    pub channels: Vec<usize>,
    /// Pooling after each GAT layer.
    pub pooling: Vec<PoolKind>,
    pub mlp_hidden: Vec<usize>,
    pub num_classes: usize,
    pub c2g_step: f64,
    pub negative_slope: f64,
    pub heads: usize,
    pub loss: LossKind,
}

impl Default for CcrGnnConfig {
    fn default() -> Self {
        CcrGnnConfig {
            channels: vec![8, 64, 9],
            pooling: vec![PoolKind::Mean, PoolKind::Mean, PoolKind::Max],
            mlp_hidden: vec![128],
            num_classes: 9,
            c2g_step: DEFAULT_STEP,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
            heads: 1,
            loss: LossKind::Bce,
        }
    }
}

impl CcrGnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "channels must be non-empty and positive, got {:?}",
                self.channels
            )));
        }
        if self.pooling.len() != self.channels.len() {
            return Err(Error::Config(format!(
                "{} pooling kinds for {} layers",
                self.pooling.len(),
                self.channels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.heads != 1 {
            return Err(Error::Config(format!(
                "only single-head attention is supported, got {} heads",
                self.heads
            )));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("MLP hidden sizes must be positive".into()));
        }
        if !(self.c2g_step > 0.0 && self.c2g_step.is_finite()) {
            return Err(Error::Config(format!("c2g_step must be positive, got {}", self.c2g_step)));
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return Err(Error::Config(format!(
                "negative_slope must lie in (0, 1), got {}",
                self.negative_slope
            )));
        }
        Ok(())
    }

    /// `d · (1 + Σ channels)`.
    pub fn local_dim(&self, d: usize) -> usize {
        d * (1 + self.channels.iter().sum::<usize>())
    }

    /// `Σ channels`.
    pub fn global_dim(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn readout_dim(&self, d: usize) -> usize {
        self.local_dim(d) + self.global_dim()
    }

    /// Parameter shapes in declared order: per GAT layer `(Θ, a)`, then per
    /// MLP layer `(W, b)`.
    pub fn param_shapes(&self, d: usize) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut input = 1;
        for &c in &self.channels {
            shapes.push((c, input));
            shapes.push((2 * c, 1));
            input = c;
        }
        let mut input = self.readout_dim(d);
        for &h in self.mlp_hidden.iter().chain(std::iter::once(&self.num_classes)) {
            shapes.push((h, input));
            shapes.push((h, 1));
            input = h;
        }
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weight: Matrix,
    /// `out x 1`.
    pub bias: Matrix,
}

/// Every trainable parameter of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct CcrGnnParams {
    pub feature_dim: usize,
    pub gat_layers: Vec<GatLayerParams>,
    pub mlp: Vec<DenseLayer>,
}

impl CcrGnnParams {
    /// Rebuilds parameters from tensors in declared order.
    pub fn from_tensors(config: &CcrGnnConfig, d: usize, tensors: Vec<Matrix>) -> Result<Self> {
        let shapes = config.param_shapes(d);
        if tensors.len() != shapes.len() {
            return Err(Error::Contract(format!(
                "{} tensors for {} parameter slots",
                tensors.len(),
                shapes.len()
            )));
        }
        for (i, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != *s {
                return Err(Error::Contract(format!(
                    "parameter {i} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let gat_layers = config
            .channels
            .iter()
            .map(|_| GatLayerParams {
                theta: it.next().unwrap(),
                attn: it.next().unwrap(),
                negative_slope: config.negative_slope,
            })
            .collect();
        let mlp = (0..=config.mlp_hidden.len())
            .map(|_| DenseLayer {
                weight: it.next().unwrap(),
                bias: it.next().unwrap(),
            })
            .collect();
        Ok(CcrGnnParams {
            feature_dim: d,
            gat_layers,
            mlp,
        })
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.gat_layers {
            out.push(&l.theta);
            out.push(&l.attn);
        }
        for l in &self.mlp {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.gat_layers {
            out.push(&mut l.theta);
            out.push(&mut l.attn);
        }
        for l in &mut self.mlp {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `‖Δ‖²` over every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }
}

/// Handles to the parameters bound on one tape, in declared order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub gat: Vec<LayerVars>,
    pub mlp: Vec<(Var, Var)>,
    pub all: Vec<Var>,
}

impl ModelVars {
    pub fn bind<'a>(tape: &mut Tape<'a>, params: &'a CcrGnnParams) -> Self {
        let all: Vec<Var> = params.tensors().into_iter().map(|t| tape.param(t)).collect();
        Self::split(params.gat_layers.len(), &all)
    }

    /// Splits declared-order handles into layers: pairs alternate, GAT
    /// layers first.
    pub fn from_flat(config: &CcrGnnConfig, vars: &[Var]) -> Self {
        debug_assert_eq!(vars.len(), 2 * (config.channels.len() + config.mlp_hidden.len() + 1));
        Self::split(config.channels.len(), vars)
    }

    fn split(l: usize, vars: &[Var]) -> Self {
        let gat = (0..l)
            .map(|i| LayerVars {
                theta: vars[2 * i],
                attn: vars[2 * i + 1],
            })
            .collect();
        let mlp = vars[2 * l..].chunks(2).map(|c| (c[0], c[1])).collect();
        ModelVars {
            gat,
            mlp,
            all: vars.to_vec(),
        }
    }
}

/// Slot handles produced by [`forward_on_tape`].
#[derive(Debug, Clone)]
pub struct TapeTrace {
    pub states: Vec<Var>,
    pub pooled: Vec<Var>,
    pub r_local: Var,
    pub r_global: Var,
    pub logits: Var,
    pub log_probs: Var,
}

pub fn forward_on_tape(
    tape: &mut Tape<'_>,
    config: &CcrGnnConfig,
    vars: &ModelVars,
    graph: &FeatureGraph,
) -> Result<TapeTrace> {
    if vars.gat.len() != config.channels.len() {
        return Err(Error::Contract(format!(
            "{} GAT parameter sets for {} layers",
            vars.gat.len(),
            config.channels.len()
        )));
    }
    let d = graph.num_nodes();
    let x0 = tape.constant(Matrix::column(graph.attrs()));
    let mut states = vec![x0];
    let mut pooled = Vec::with_capacity(config.channels.len());
    let mut h = x0;
    for (l, (layer, &kind)) in vars.gat.iter().zip(&config.pooling).enumerate() {
        h = gat_layer_on_tape(tape, *layer, config.negative_slope, graph, h)
            .map_err(|e| Error::Contract(format!("GAT layer {}: {e}", l + 1)))?;
        states.push(h);
        pooled.push(pool_on_tape(tape, h, kind));
    }
    let flat: Vec<Var> = states.iter().map(|&s| tape.flatten(s)).collect();
    let r_local = tape.concat_rows(&flat);
    let r_global = tape.concat_rows(&pooled);
    let mut z = tape.concat_rows(&[r_local, r_global]);

    let n_mlp = vars.mlp.len();
    for (k, &(w, b)) in vars.mlp.iter().enumerate() {
        let (w_shape, z_len) = (tape.value(w).shape(), tape.value(z).rows());
        if w_shape.1 != z_len {
            return Err(Error::Contract(format!(
                "MLP layer {} expects {} inputs but receives {z_len} (graph has {d} nodes)",
                k + 1,
                w_shape.1
            )));
        }
        let wz = tape.matmul(w, z);
        z = tape.add(wz, b);
        if k + 1 < n_mlp {
            z = tape.leaky_relu(z, config.negative_slope);
        }
    }
    let log_probs = tape.log_softmax(z);
    Ok(TapeTrace {
        states,
        pooled,
        r_local,
        r_global,
        logits: z,
        log_probs,
    })
}

fn check_one_hot(y: &[f64]) -> Result<usize> {
    let hot: Vec<usize> = y
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect();
    if hot.len() != 1 || y[hot[0]] != 1.0 {
        return Err(Error::Contract(format!("target {y:?} is not one-hot")));
    }
    Ok(hot[0])
}

pub fn one_hot(label: usize, m: usize) -> Vec<f64> {
    (0..m).map(|i| if i == label { 1.0 } else { 0.0 }).collect()
}

/// Data term plus `λ Σ ‖θ‖²` over `params`.
pub fn loss_on_tape(
    tape: &mut Tape<'_>,
    log_probs: Var,
    y: &[f64],
    params: &[Var],
    lambda: f64,
    kind: LossKind,
) -> Result<Var> {
    check_one_hot(y)?;
    let m = tape.value(log_probs).len();
    if y.len() != m {
        return Err(Error::Contract(format!(
            "target has {} classes, prediction has {m}",
            y.len()
        )));
    }
    let target = tape.constant(Matrix::column(y));
    let data = match kind {
        LossKind::Bce => {
            let complement = tape.constant(Matrix::column(&y.iter().map(|v| 1.0 - v).collect::<Vec<_>>()));
            let p = tape.exp(log_probs);
            let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
            let log_p = tape.ln(p);
            let neg_p = tape.scale(p, -1.0);
            let q = tape.offset(neg_p, 1.0);
            let log_q = tape.ln(q);
            let pos = tape.hadamard(target, log_p);
            let neg = tape.hadamard(complement, log_q);
            let both = tape.add(pos, neg);
            let s = tape.sum(both);
            tape.scale(s, -1.0)
        }
        LossKind::CategoricalCe => {
            let picked = tape.hadamard(target, log_probs);
            let s = tape.sum(picked);
            tape.scale(s, -1.0)
        }
    };
    if lambda == 0.0 || params.is_empty() {
        return Ok(data);
    }
    let squares: Vec<Var> = params.iter().map(|&p| tape.sum_squares(p)).collect();
    let mut reg = squares[0];
    for &s in &squares[1..] {
        reg = tape.add(reg, s);
    }
    let reg = tape.scale(reg, lambda);
    Ok(tape.add(data, reg))
}

/// Loss of given log-probabilities against a one-hot target.
pub fn loss(
    log_probs: &[f64],
    y: &[f64],
    params: &CcrGnnParams,
    lambda: f64,
    kind: LossKind,
) -> Result<f64> {
    let mut tape = Tape::inference();
    let lp = tape.constant(Matrix::column(log_probs));
    let vars: Vec<Var> = params.tensors().into_iter().map(|t| tape.constant_ref(t)).collect();
    let l = loss_on_tape(&mut tape, lp, y, &vars, lambda, kind)?;
    Ok(tape.value(l).item())
}

/// Plain values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub states: Vec<Matrix>,
    pub pooled: Vec<Vec<f64>>,
    pub r_local: Vec<f64>,
    pub r_global: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn probabilities(&self) -> Vec<f64> {
        self.log_probs.iter().map(|v| v.exp()).collect()
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.log_probs)
    }
}

/// Lowest index among maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_graph(params: &CcrGnnParams, graph: &FeatureGraph) -> Result<()> {
    if graph.num_nodes() != params.feature_dim {
        return Err(Error::Contract(format!(
            "graph has {} nodes but the model was built for {} features",
            graph.num_nodes(),
            params.feature_dim
        )));
    }
    Ok(())
}

pub fn forward(params: &CcrGnnParams, config: &CcrGnnConfig, graph: &FeatureGraph) -> Result<ForwardTrace> {
    check_graph(params, graph)?;
    let mut tape = Tape::inference();
    let vars = ModelVars::bind(&mut tape, params);
    let t = forward_on_tape(&mut tape, config, &vars, graph)?;
    Ok(ForwardTrace {
        states: t.states.iter().map(|&s| tape.value(s).clone()).collect(),
        pooled: t.pooled.iter().map(|&p| tape.value(p).as_slice().to_vec()).collect(),
        r_local: tape.value(t.r_local).as_slice().to_vec(),
        r_global: tape.value(t.r_global).as_slice().to_vec(),
        log_probs: tape.value(t.log_probs).as_slice().to_vec(),
    })
}

/// Loss, per-parameter gradients (declared order) and log-probabilities for
/// one sample.
pub fn loss_and_gradients(
    params: &CcrGnnParams,
    config: &CcrGnnConfig,
    graph: &FeatureGraph,
    label: usize,
    lambda: f64,
) -> Result<(f64, Vec<Matrix>, Vec<f64>)> {
    check_graph(params, graph)?;
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&mut tape, params);
    let trace = forward_on_tape(&mut tape, config, &vars, graph)?;
    let y = one_hot(label, config.num_classes);
    let l = loss_on_tape(&mut tape, trace.log_probs, &y, &vars.all, lambda, config.loss)?;
    let mut grads = tape.backward(l)?;
    let tensors = params.tensors();
    let g = vars
        .all
        .iter()
        .zip(&tensors)
        .map(|(&v, t)| grads.take(v, t.shape()))
        .collect();
    Ok((
        tape.value(l).item(),
        g,
        tape.value(trace.log_probs).as_slice().to_vec(),
    ))
}

pub fn predict_graph(params: &CcrGnnParams, config: &CcrGnnConfig, graph: &FeatureGraph) -> Result<usize> {
    Ok(forward(params, config, graph)?.predicted())
}

pub fn predict(params: &CcrGnnParams, config: &CcrGnnConfig, record: &ProcessedRecord) -> Result<usize> {
    let graph = build_graph(&record.x, config.c2g_step)?;
    predict_graph(params, config, &graph)
}
