//! Closed-form parameter and FLOP counts. One multiply-add is 2 FLOPs;
//! activations, softmax and normalization are not counted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Combine;
use crate::reason::{GraphIndex, ReasonerModel};
use crate::Scalar;

/// Parameters of the transformer-encoder comparison point.
pub const REFERENCE_PARAMS: u64 = 110_000_000;
/// FLOPs of one token through the comparison encoder (2 per parameter).
pub const REFERENCE_TOKEN_FLOPS: u64 = 2 * REFERENCE_PARAMS;

pub const FLOP_CONVENTION: &str = "1 multiply-add = 2 FLOPs; linear layers 2*in*out, attention scores and mixing 2*A*A*d each";

pub fn linear_params(inp: usize, out: usize) -> u64 {
    (inp * out + out) as u64
}

pub fn linear_flops(inp: usize, out: usize) -> u64 {
    2 * (inp * out) as u64
}

/// `Q·Kᵀ` and `P·V` over one window of `a` positions at width `d`.
pub fn attention_flops(a: usize, d: usize) -> u64 {
    2 * 2 * (a * a * d) as u64
}

/// Size of one mission graph as seen by the reasoner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphShape {
    pub nodes: usize,
    /// Previous-level predecessor links (message-passing edges).
    pub edges: usize,
}

impl From<&GraphIndex> for GraphShape {
    fn from(g: &GraphIndex) -> Self {
        Self {
            nodes: g.len(),
            edges: g.edge_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    /// Trainable projection-head parameters (frozen during reasoning).
    pub ssl_head_params: u64,
    /// Frame token of one packet from scratch.
    pub frame_flops: u64,
    /// One window classified from scratch: every frame plus the temporal model.
    pub window_flops: u64,
    /// Incremental cost of scoring the next packet of a stream with cached
    /// per-frame projections.
    pub stream_step_flops: u64,
    pub breakdown: BTreeMap<String, u64>,
    pub reference_params: u64,
    pub reference_token_flops: u64,
    pub convention: String,
}

impl CostReport {
    pub fn param_ratio(&self) -> f64 {
        self.params as f64 / self.reference_params as f64
    }

    pub fn stream_flop_ratio(&self) -> f64 {
        self.stream_step_flops as f64 / self.reference_token_flops as f64
    }
}

pub fn count_params<F: Scalar>(model: &ReasonerModel<F>) -> u64 {
    model.param_count() as u64
}

/// FLOPs of the reasoner over `graphs` (in mission order). `packet_head` is
/// the `(input, output)` shape of the packet projection head, if any.
pub fn count_flops<F: Scalar>(
    model: &ReasonerModel<F>,
    graphs: &[GraphShape],
    packet_head: Option<(usize, usize)>,
    ssl_head_params: u64,
) -> CostReport {
    let cfg = &model.config;
    let (d, e) = (cfg.node_dim, model.embed_dim);
    let (a, dm, dff) = (cfg.window, cfg.d_model, cfg.d_ff);
    let mut b = BTreeMap::new();

    let head = packet_head.map_or(0, |(i, o)| linear_flops(i, o));
    let mp_per_edge = match cfg.combine {
        Combine::Elementwise => 2 * d as u64,
        Combine::ScalarGated => 4 * d as u64,
    };
    let mut adapters_all = 0;
    let mut adapters_sensor = 0;
    let mut gnn = 0;
    for g in graphs {
        adapters_all += g.nodes as u64 * linear_flops(e, d);
        adapters_sensor += linear_flops(e, d);
        gnn += cfg.gnn_layers as u64 * (g.nodes as u64 * linear_flops(d, d) + g.edges as u64 * mp_per_edge);
    }
    let frame = head + adapters_all + gnn;
    let frame_cached = head + adapters_sensor + gnn;

    let token = model.token_dim();
    let in_proj = linear_flops(token, dm);
    let qkv_row = 3 * linear_flops(dm, dm);
    let att = attention_flops(a, dm);
    let out_proj = a as u64 * linear_flops(dm, dm);
    let ffn = a as u64 * (linear_flops(dm, dff) + linear_flops(dff, dm));
    let block = a as u64 * qkv_row + att + out_proj + ffn;
    let cls = linear_flops(dm, cfg.cls_hidden) + linear_flops(cfg.cls_hidden, model.classes.len());
    let depth = cfg.depth as u64;

    let temporal_window = a as u64 * in_proj + depth * block + cls;
    let temporal_step = in_proj + qkv_row + att + out_proj + ffn + (depth - 1) * block + cls;

    b.insert("packet_head".into(), head);
    b.insert("adapters".into(), adapters_all);
    b.insert("gnn".into(), gnn);
    b.insert("input_projection".into(), a as u64 * in_proj);
    b.insert("attention_projections".into(), depth * (a as u64 * qkv_row + out_proj));
    b.insert("attention_scores".into(), depth * att);
    b.insert("feed_forward".into(), depth * ffn);
    b.insert("classifier".into(), cls);

    CostReport {
        params: count_params(model),
        ssl_head_params,
        frame_flops: frame,
        window_flops: a as u64 * frame + temporal_window,
        stream_step_flops: frame_cached + temporal_step,
        breakdown: b,
        reference_params: REFERENCE_PARAMS,
        reference_token_flops: REFERENCE_TOKEN_FLOPS,
        convention: FLOP_CONVENTION.into(),
    }
}
