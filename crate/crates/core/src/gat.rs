//! Single-head graph attention layer and graph pooling.
//!
//! Node states are `d x c` matrices, one row per node. A layer transforms
//! every row by `Θ`, scores each pair `(i, j)` with
//! `LeakyReLU(aᵀ[Θh_i ‖ Θh_j])`, normalizes the scores over `N(i) ∪ {i}`
//! and aggregates the transformed rows with those weights. There is no bias
//! and no activation after aggregation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::c2g::FeatureGraph;
use crate::error::{Error, Result};

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    /// `out x in`.
    pub theta: Matrix,
    /// `2·out x 1`: source half, then neighbour half.
    pub attn: Matrix,
    pub negative_slope: f64,
}

impl GatLayerParams {
    pub fn in_dim(&self) -> usize {
        self.theta.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.theta.rows()
    }

    fn check(&self, graph: &FeatureGraph, h: &Matrix) -> Result<()> {
        check_shapes(
            self.theta.shape(),
            self.attn.shape(),
            graph.num_nodes(),
            h.shape(),
        )
    }
}

pub(crate) fn check_shapes(
    theta: (usize, usize),
    attn: (usize, usize),
    nodes: usize,
    h: (usize, usize),
) -> Result<()> {
    if attn != (2 * theta.0, 1) {
        return Err(Error::Contract(format!(
            "attention vector has shape {attn:?}, expected ({}, 1) for theta {theta:?}",
            2 * theta.0
        )));
    }
    if h.0 != nodes {
        return Err(Error::Contract(format!(
            "node states have {} rows but the graph has {nodes} nodes",
            h.0
        )));
    }
    if h.1 != theta.1 {
        return Err(Error::Contract(format!(
            "node states {h:?} do not conform to theta {theta:?}"
        )));
    }
    Ok(())
}

/// Handles to one layer's parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub theta: Var,
    pub attn: Var,
}

/// `mask[i*d + j]` is set iff `j ∈ N(i) ∪ {i}`.
pub fn attention_mask(graph: &FeatureGraph) -> Vec<bool> {
    let d = graph.num_nodes();
    let mut mask = vec![false; d * d];
    for i in 0..d {
        mask[i * d + i] = true;
        for &j in graph.neighbors(i) {
            mask[i * d + j] = true;
        }
    }
    mask
}

/// Records the attention weights on the tape. Returns `(alpha, Θ-transformed
/// states)` where `alpha` is `d x d` and zero outside each node's set.
pub fn attention_on_tape(
    tape: &mut Tape<'_>,
    layer: LayerVars,
    negative_slope: f64,
    graph: &FeatureGraph,
    h: Var,
) -> Result<(Var, Var)> {
    check_shapes(
        tape.value(layer.theta).shape(),
        tape.value(layer.attn).shape(),
        graph.num_nodes(),
        tape.value(h).shape(),
    )?;
    let d = graph.num_nodes();
    let out = tape.value(layer.theta).rows();

    let theta_t = tape.transpose(layer.theta);
    let transformed = tape.matmul(h, theta_t); // d x out
    let a_src = tape.slice_rows(layer.attn, 0, out);
    let a_dst = tape.slice_rows(layer.attn, out, 2 * out);
    let s_src = tape.matmul(transformed, a_src); // d x 1
    let s_dst = tape.matmul(transformed, a_dst); // d x 1

    // scores[i][j] = s_src[i] + s_dst[j]
    let ones_row = tape.constant(Matrix::filled(1, d, 1.0));
    let ones_col = tape.constant(Matrix::filled(d, 1, 1.0));
    let src_part = tape.matmul(s_src, ones_row);
    let s_dst_t = tape.transpose(s_dst);
    let dst_part = tape.matmul(ones_col, s_dst_t);
    let scores = tape.add(src_part, dst_part);
    let scores = tape.leaky_relu(scores, negative_slope);
    let alpha = tape.masked_row_softmax(scores, attention_mask(graph));
    Ok((alpha, transformed))
}

/// One GAT update: `h'_i = Σ_{j ∈ N(i) ∪ {i}} α_ij Θ h_j`.
pub fn gat_layer_on_tape(
    tape: &mut Tape<'_>,
    layer: LayerVars,
    negative_slope: f64,
    graph: &FeatureGraph,
    h: Var,
) -> Result<Var> {
    let (alpha, transformed) = attention_on_tape(tape, layer, negative_slope, graph, h)?;
    Ok(tape.matmul(alpha, transformed))
}

pub fn pool_on_tape(tape: &mut Tape<'_>, h: Var, kind: PoolKind) -> Var {
    match kind {
        PoolKind::Mean => tape.row_mean(h),
        PoolKind::Max => tape.row_max(h),
    }
}

/// Dense attention weights; row `i` sums to one over `N(i) ∪ {i}`.
#[derive(Debug, Clone)]
pub struct Attention {
    weights: Matrix,
}

impl Attention {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }
}

pub fn attention_coefficients(
    layer: &GatLayerParams,
    graph: &FeatureGraph,
    h: &Matrix,
) -> Result<Attention> {
    layer.check(graph, h)?;
    let mut tape = Tape::inference();
    let vars = LayerVars {
        theta: tape.constant_ref(&layer.theta),
        attn: tape.constant_ref(&layer.attn),
    };
    let hv = tape.constant_ref(h);
    let (alpha, _) = attention_on_tape(&mut tape, vars, layer.negative_slope, graph, hv)?;
    Ok(Attention {
        weights: tape.value(alpha).clone(),
    })
}

pub fn gat_forward(layer: &GatLayerParams, graph: &FeatureGraph, h: &Matrix) -> Result<Matrix> {
    layer.check(graph, h)?;
    let mut tape = Tape::inference();
    let vars = LayerVars {
        theta: tape.constant_ref(&layer.theta),
        attn: tape.constant_ref(&layer.attn),
    };
    let hv = tape.constant_ref(h);
    let out = gat_layer_on_tape(&mut tape, vars, layer.negative_slope, graph, hv)?;
    Ok(tape.value(out).clone())
}

pub fn graph_pool(h: &Matrix, kind: PoolKind) -> Vec<f64> {
    let mut tape = Tape::inference();
    let hv = tape.constant_ref(h);
    let pooled = pool_on_tape(&mut tape, hv, kind);
    tape.value(pooled).as_slice().to_vec()
}
