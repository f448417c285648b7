use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::forward::{block_forward, block_tail, classify, linear, standardize, MissionInputs};
use super::model::ReasonerModel;
use super::ReasonError;
use crate::autodiff::{attention_fwd, message_pass_fwd, softmax_rows};
use crate::ingest::LabeledSequence;
use crate::Scalar;

struct Cached<F: Scalar> {
    h: Array1<F>,
    q: Array1<F>,
    k: Array1<F>,
    v: Array1<F>,
}

/// Sliding-window inference, one packet at a time.
///
/// Adapted concept features, the positional parts of the first block's
/// query/key/value projections, and each frame's input projection are
/// computed once; the result equals [`temporal_forward`](super::temporal_forward)
/// on the padded window up to rounding.
pub struct StreamState<'a, F: Scalar> {
    model: &'a ReasonerModel<F>,
    inputs: &'a [MissionInputs<F>],
    /// Level-0 features per mission with the sensor row left to fill.
    base: Vec<Array2<F>>,
    pos_q: Array2<F>,
    pos_k: Array2<F>,
    pos_v: Array2<F>,
    ring: VecDeque<Cached<F>>,
}

impl<'a, F: Scalar> StreamState<'a, F> {
    pub fn new(model: &'a ReasonerModel<F>, inputs: &'a [MissionInputs<F>]) -> Result<Self, ReasonError> {
        if inputs.len() != model.missions.len() {
            return Err(ReasonError::Config(format!(
                "{} mission graphs for {} missions",
                inputs.len(),
                model.missions.len()
            )));
        }
        for (i, r) in inputs.iter().zip(&model.missions) {
            if i.mission != r.mission || i.text.ncols() != model.embed_dim {
                return Err(ReasonError::Config(format!("graph inputs for `{}` do not fit `{}`", i.mission, r.mission)));
            }
        }
        let base = inputs
            .iter()
            .zip(&model.missions)
            .map(|(i, r)| linear(i.text.view(), &r.adapter_w, &r.adapter_b))
            .collect();
        let b0 = &model.head.blocks[0];
        let pos = model.head.pos.view();
        Ok(Self {
            model,
            inputs,
            base,
            pos_q: linear(pos, &b0.wq, &b0.bq),
            pos_k: linear(pos, &b0.wk, &b0.bk),
            pos_v: linear(pos, &b0.wv, &b0.bv),
            ring: VecDeque::with_capacity(model.head.window()),
        })
    }

    /// Frame token of one packet from its standardized embedding.
    pub fn frame(&self, z: ArrayView1<'_, F>) -> Array1<F> {
        let cfg = &self.model.config;
        let d = cfg.node_dim;
        let mut token = Array1::zeros(self.inputs.len() * d);
        for (m, (inp, r)) in self.inputs.iter().zip(&self.model.missions).enumerate() {
            let mut x = self.base[m].clone();
            let sensor = r.adapter_w.dot(&z) + r.adapter_b.row(0);
            x.row_mut(inp.graph.sensor).assign(&sensor);
            for layer in &r.layers {
                x = linear(x.view(), &layer.w, &layer.b);
                x = message_pass_fwd(x.view(), &inp.graph.preds, cfg.activation, cfg.combine);
            }
            token
                .slice_mut(ndarray::s![m * d..(m + 1) * d])
                .assign(&x.row(inp.graph.embedding));
        }
        token
    }

    /// Scores the newest packet given everything pushed so far.
    pub fn push(&mut self, z_packet: ArrayView1<'_, F>) -> Array1<F> {
        let z = standardize(z_packet);
        let f = self.frame(z.view());
        let head = &self.model.head;
        let b0 = &head.blocks[0];
        let h = head.in_w.dot(&f) + head.in_b.row(0);
        let cached = Cached {
            q: b0.wq.dot(&h),
            k: b0.wk.dot(&h),
            v: b0.wv.dot(&h),
            h,
        };
        let a = head.window();
        if self.ring.len() == a {
            self.ring.pop_front();
        }
        self.ring.push_back(cached);

        let pad = a - self.ring.len();
        let dm = head.d_model();
        let mut x = Array2::zeros((a, dm));
        let mut q = self.pos_q.clone();
        let mut k = self.pos_k.clone();
        let mut v = self.pos_v.clone();
        for j in 0..a {
            let c = &self.ring[j.saturating_sub(pad)];
            x.row_mut(j).assign(&(&c.h + &head.pos.row(j)));
            q.row_mut(j).scaled_add(F::one(), &c.q);
            k.row_mut(j).scaled_add(F::one(), &c.k);
            v.row_mut(j).scaled_add(F::one(), &c.v);
        }
        let (att, _) = attention_fwd(q.view(), k.view(), v.view(), head.heads, a);
        let mut out = block_tail(x.view(), att.view(), b0);
        for b in &head.blocks[1..] {
            out = block_forward(out.view(), b, head.heads, a);
        }
        let logits = classify(out.view(), head);
        softmax_rows(logits.view().insert_axis(Axis(0))).row(0).to_owned()
    }
}

/// Class probabilities for every packet (rows of `z`, in time order).
pub fn infer_stream<F: Scalar>(
    z: &Array2<F>,
    inputs: &[MissionInputs<F>],
    model: &ReasonerModel<F>,
) -> Result<Array2<F>, ReasonError> {
    if z.ncols() != model.embed_dim {
        return Err(ReasonError::Shape(format!("embeddings have {} dims, model reads {}", z.ncols(), model.embed_dim)));
    }
    let mut state = StreamState::new(model, inputs)?;
    let mut out = Array2::zeros((z.nrows(), model.classes.len()));
    for (i, row) in z.rows().into_iter().enumerate() {
        out.row_mut(i).assign(&state.push(row));
    }
    Ok(out)
}

/// One line of score output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub ts: u64,
    pub scores: BTreeMap<String, f64>,
    /// Highest-scoring class.
    pub label: String,
    /// Ground-truth label when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

impl ScoreRecord {
    pub fn build<F: Scalar>(seq: &LabeledSequence, probs: &Array2<F>, classes: &[String]) -> Vec<Self> {
        seq.records
            .iter()
            .zip(probs.rows())
            .map(|(r, p)| {
                let best = (0..classes.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                Self {
                    ts: r.timestamp_us,
                    scores: classes.iter().cloned().zip(p.iter().map(|v| v.as_f64())).collect(),
                    label: classes[best].clone(),
                    truth: (!r.label.is_empty()).then(|| r.label.clone()),
                }
            })
            .collect()
    }
}

pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<(), ReasonError> {
    let path = path.as_ref();
    let io = |source| ReasonError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, ReasonError> {
    let path = path.as_ref();
    let io = |source| ReasonError::Io {
        path: path.display().to_string(),
        source,
    };
    let r = BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
