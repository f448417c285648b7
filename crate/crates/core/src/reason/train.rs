use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{standardize, MissionInputs};
use super::model::ReasonerModel;
use super::{ReasonError, ReasonerConfig};
use crate::autodiff::{Tape, Var};
use crate::contrastive::{EncoderPair, SslHeads};
use crate::derive_seed;
use crate::embed::encode_packet_base;
use crate::ingest::LabeledSequence;
use crate::kg::KnowledgeGraph;
use crate::optim::Adam;
use crate::Scalar;

/// Sequence indices feeding the window that ends at `t`, oldest first,
/// left-padded with index 0.
pub fn window_indices(t: usize, window: usize) -> Vec<usize> {
    (0..window).map(|j| (t + j + 1).saturating_sub(window)).collect()
}

/// Target positions of one step, `segment` consecutive indices at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub targets: Vec<usize>,
    pub segment: usize,
}

impl TrainBatch {
    pub fn sample(rng: &mut ChaCha8Rng, n: usize, segments: usize, segment: usize) -> Self {
        let mut targets = Vec::with_capacity(segments * segment);
        for _ in 0..segments {
            let s = rng.gen_range(0..=n - segment);
            targets.extend(s..s + segment);
        }
        Self { targets, segment }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasonerTrainLog {
    /// Total loss per step.
    pub losses: Vec<f64>,
    pub cross_entropy: Vec<f64>,
    /// Mean squared change between consecutive predictions per step.
    pub smoothing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedReasoner<F: Scalar> {
    pub model: ReasonerModel<F>,
    pub log: ReasonerTrainLog,
}

/// Loss terms of one batch and the gradient of the total for every
/// parameter tensor, in [`ReasonerModel::visit`] order.
#[derive(Debug, Clone)]
pub struct BatchOutput<F: Scalar> {
    pub loss: F,
    pub cross_entropy: F,
    pub smoothing: F,
    pub grads: Vec<Array2<F>>,
}

/// Standardized packet embeddings of every record, one per row.
pub fn packet_embeddings<F: Scalar>(
    seq: &LabeledSequence,
    heads: &SslHeads<F>,
    enc: &EncoderPair,
) -> Result<Array2<F>, ReasonError> {
    let mut base = Array2::zeros((seq.len(), enc.packet.output_dim));
    for (i, r) in seq.records.iter().enumerate() {
        base.row_mut(i).assign(&encode_packet_base::<F>(&r.payload, &enc.packet)?.vector);
    }
    let mut z = heads.packet_rows(base.view())?;
    for mut row in z.rows_mut() {
        let s = standardize(row.view());
        row.assign(&s);
    }
    Ok(z)
}

/// Class index of every record in `classes`.
pub fn label_indices(seq: &LabeledSequence, classes: &[String]) -> Result<Vec<usize>, ReasonError> {
    seq.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            classes
                .iter()
                .position(|c| c == &r.label)
                .ok_or_else(|| ReasonError::Config(format!("record {i} has label `{}` outside the class set", r.label)))
        })
        .collect()
}

/// Forward and backward pass over one batch on the autodiff tape.
/// `z` holds standardized packet embeddings for the whole sequence.
pub fn batch_loss<F: Scalar>(
    model: &ReasonerModel<F>,
    inputs: &[MissionInputs<F>],
    z: &Array2<F>,
    labels: &[usize],
    batch: &TrainBatch,
) -> Result<BatchOutput<F>, ReasonError> {
    let cfg = &model.config;
    if inputs.len() != model.missions.len() {
        return Err(ReasonError::Config(format!(
            "{} mission graphs for {} missions",
            inputs.len(),
            model.missions.len()
        )));
    }
    let a = model.head.window();
    let mut tape = Tape::<F>::new();
    let mut params = Vec::new();
    model.visit(|_, t| params.push(tape.leaf(t.clone())));

    let needed: Vec<usize> = batch
        .targets
        .iter()
        .flat_map(|&t| window_indices(t, a))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut local = vec![usize::MAX; z.nrows()];
    for (i, &g) in needed.iter().enumerate() {
        local[g] = i;
    }
    let p = needed.len();
    let zp = tape.leaf(z.select(Axis(0), &needed));

    let per_mission = 2 + 2 * cfg.gnn_layers;
    let mut emb = Vec::with_capacity(inputs.len());
    for (m, inp) in inputs.iter().enumerate() {
        let g = &inp.graph;
        let n = g.len();
        let pv = &params[m * per_mission..(m + 1) * per_mission];
        let stat_rows = inp.static_rows();
        let stat = tape.leaf(inp.text.select(Axis(0), &stat_rows));
        let sens = tape.linear(zp, pv[0], Some(pv[1]));
        let stat = tape.linear(stat, pv[0], Some(pv[1]));
        let cat = tape.concat_rows(&[sens, stat]);
        let mut idx = Vec::with_capacity(p * n);
        let mut preds = Vec::with_capacity(p * n);
        for b in 0..p {
            for j in 0..n {
                idx.push(match j.cmp(&g.sensor) {
                    std::cmp::Ordering::Equal => b,
                    std::cmp::Ordering::Less => p + j,
                    std::cmp::Ordering::Greater => p + j - 1,
                });
                preds.push(g.preds[j].iter().map(|&u| b * n + u).collect());
            }
        }
        let preds = Arc::new(preds);
        let mut x = tape.gather_rows(cat, Arc::new(idx));
        for l in 0..cfg.gnn_layers {
            x = tape.linear(x, pv[2 + 2 * l], Some(pv[3 + 2 * l]));
            x = tape.message_pass(x, preds.clone(), cfg.activation, cfg.combine);
        }
        emb.push(tape.gather_rows(x, Arc::new((0..p).map(|b| b * n + g.embedding).collect())));
    }
    let frames = tape.concat_cols(&emb);

    let rows: Vec<usize> = batch
        .targets
        .iter()
        .flat_map(|&t| window_indices(t, a))
        .map(|g| local[g])
        .collect();
    let win = tape.gather_rows(frames, Arc::new(rows));
    let hp = &params[inputs.len() * per_mission..];
    let mut h = tape.linear(win, hp[0], Some(hp[1]));
    h = tape.add_tiled(h, hp[2]);
    for blk in 0..cfg.depth {
        let bp = &hp[3 + 16 * blk..3 + 16 * (blk + 1)];
        let q = tape.linear(h, bp[0], Some(bp[1]));
        let k = tape.linear(h, bp[2], Some(bp[3]));
        let v = tape.linear(h, bp[4], Some(bp[5]));
        let att = tape.attention(q, k, v, cfg.heads, a);
        let o = tape.linear(att, bp[6], Some(bp[7]));
        let r = tape.add(h, o);
        let h1 = tape.layer_norm(r, bp[8], bp[9]);
        let f = tape.linear(h1, bp[10], Some(bp[11]));
        let f = tape.relu(f);
        let f = tape.linear(f, bp[12], Some(bp[13]));
        let r2 = tape.add(h1, f);
        h = tape.layer_norm(r2, bp[14], bp[15]);
    }
    let cp = &hp[3 + 16 * cfg.depth..];
    let pooled = tape.segment_mean(h, a);
    let c1 = tape.linear(pooled, cp[0], Some(cp[1]));
    let c1 = tape.relu(c1);
    let logits = tape.linear(c1, cp[2], Some(cp[3]));

    let targets = Arc::new(batch.targets.iter().map(|&t| labels[t]).collect::<Vec<_>>());
    let ce = tape.softmax_cross_entropy(logits, targets);
    let probs = tape.softmax(logits);
    let pairs: Vec<(usize, usize)> = (0..batch.targets.len())
        .filter(|i| (i + 1) % batch.segment != 0 && i + 1 < batch.targets.len())
        .map(|i| (i, i + 1))
        .collect();
    let sm = tape.pair_sq_dist(probs, Arc::new(pairs));
    let weighted = tape.scale(sm, F::of(cfg.smoothing));
    let total = tape.add(ce, weighted);

    let loss = tape.scalar(total);
    let mut grads_all = tape.backward(total);
    let grads = params
        .iter()
        .map(|v: &Var| grads_all[v.index()].take().unwrap_or_else(|| Array2::zeros(tape.value(*v).dim())))
        .collect();
    Ok(BatchOutput {
        loss,
        cross_entropy: tape.scalar(ce),
        smoothing: tape.scalar(sm),
        grads,
    })
}

/// Trains mission reasoners and the temporal head on a labelled sequence.
/// The projection heads are frozen.
pub fn train_reasoner<F: Scalar>(
    train: &LabeledSequence,
    kgs: &[KnowledgeGraph],
    heads: &SslHeads<F>,
    enc: &EncoderPair,
    cfg: &ReasonerConfig,
) -> Result<TrainedReasoner<F>, ReasonError> {
    let inputs = kgs
        .iter()
        .map(|k| MissionInputs::new(k, heads, enc))
        .collect::<Result<Vec<_>, _>>()?;
    let z = packet_embeddings(train, heads, enc)?;
    let labels = label_indices(train, &train.class_set)?;
    let missions: Vec<String> = kgs.iter().map(|k| k.mission.clone()).collect();
    let model = ReasonerModel::init(cfg, &missions, &train.class_set, heads.embed_dim())?;
    train_from(model, &inputs, &z, &labels)
}

/// Training loop from an initialized model over precomputed embeddings.
pub fn train_from<F: Scalar>(
    mut model: ReasonerModel<F>,
    inputs: &[MissionInputs<F>],
    z: &Array2<F>,
    labels: &[usize],
) -> Result<TrainedReasoner<F>, ReasonError> {
    let cfg = model.config;
    cfg.validate()?;
    let n = z.nrows();
    if labels.len() != n {
        return Err(ReasonError::Shape(format!("{} labels for {n} packets", labels.len())));
    }
    if n < cfg.segment {
        return Err(ReasonError::Config(format!(
            "{n} training packets is shorter than one segment of {}",
            cfg.segment
        )));
    }
    let mut opt = Adam::<F>::new(cfg.adam, &model.tensor_sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x6261_7463));
    let mut log = ReasonerTrainLog::default();
    for step in 0..cfg.steps {
        let batch = TrainBatch::sample(&mut rng, n, cfg.batch / cfg.segment, cfg.segment);
        let out = batch_loss(&model, inputs, z, labels, &batch)?;
        if !out.loss.is_finite() {
            return Err(ReasonError::NonFinite {
                step,
                param_norm: model.param_norm(),
            });
        }
        log.losses.push(out.loss.as_f64());
        log.cross_entropy.push(out.cross_entropy.as_f64());
        log.smoothing.push(out.smoothing.as_f64());
        opt.tick();
        let mut slot = 0;
        model.visit_mut(|_, t| {
            let g = &out.grads[slot];
            opt.update(
                slot,
                t.as_slice_mut().expect("standard layout"),
                g.as_standard_layout().as_slice().expect("standard layout"),
            );
            slot += 1;
        });
        if step % 50 == 0 {
            log::debug!("reasoner step {step}: loss {:.5} (ce {:.5})", out.loss, out.cross_entropy);
        }
    }
    Ok(TrainedReasoner { model, log })
}
