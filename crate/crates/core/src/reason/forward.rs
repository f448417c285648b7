//! Plain (tape-free) forward passes. Training records the same computation
//! on the autodiff tape; these are used for inference and as references.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::graph::{FeatureAssignment, GraphIndex};
use super::model::{EncoderBlock, MissionReasoner, ReasonerModel, TemporalHead};
use super::ReasonError;
use crate::autodiff::{attention_fwd, message_pass_fwd, normalize_rows, softmax_rows, Activation, Combine};
use crate::contrastive::{EncoderPair, SslHeads};
use crate::kg::KnowledgeGraph;
use crate::Scalar;

/// Rescales an embedding to norm `sqrt(len)` so its entries have unit mean
/// square; the zero vector stays zero.
pub fn standardize<F: Scalar>(z: ArrayView1<'_, F>) -> Array1<F> {
    let norm = z.dot(&z).sqrt();
    if norm == F::zero() {
        return z.to_owned();
    }
    z.mapv(|v| v * F::of_usize(z.len()).sqrt() / norm)
}

/// A mission graph with the (static) text embeddings of its nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionInputs<F: Scalar> {
    pub mission: String,
    pub graph: GraphIndex,
    /// Standardized text embedding per node; the sensor row is unused.
    pub text: Array2<F>,
}

impl<F: Scalar> MissionInputs<F> {
    /// Embeds every concept once, and the mission name for the embedding node.
    pub fn new(kg: &KnowledgeGraph, heads: &SslHeads<F>, enc: &EncoderPair) -> Result<Self, ReasonError> {
        let graph = GraphIndex::from_kg(kg)?;
        let mut text = Array2::zeros((graph.len(), heads.embed_dim()));
        for (i, t) in graph.texts.iter().enumerate() {
            if i != graph.sensor {
                text.row_mut(i).assign(&standardize(heads.embed_text(t, enc)?.view()));
            }
        }
        Ok(Self {
            mission: kg.mission.clone(),
            graph,
            text,
        })
    }

    pub fn from_parts(mission: &str, graph: GraphIndex, text: Array2<F>) -> Result<Self, ReasonError> {
        if text.nrows() != graph.len() {
            return Err(ReasonError::Shape(format!("{} text rows for {} nodes", text.nrows(), graph.len())));
        }
        Ok(Self {
            mission: mission.to_string(),
            graph,
            text,
        })
    }

    /// Row indices of every node except the sensor, in graph order.
    pub(crate) fn static_rows(&self) -> Vec<usize> {
        (0..self.graph.len()).filter(|&i| i != self.graph.sensor).collect()
    }
}

fn adapt<F: Scalar>(x: ArrayView2<'_, F>, r: &MissionReasoner<F>) -> Array2<F> {
    x.dot(&r.adapter_w.t()) + &r.adapter_b
}

/// Level-0 features: the sensor carries the adapted packet embedding, every
/// other node the adapted embedding of its text.
pub fn init_node_features<F: Scalar>(
    inputs: &MissionInputs<F>,
    z_packet: ArrayView1<'_, F>,
    reasoner: &MissionReasoner<F>,
) -> Result<FeatureAssignment<F>, ReasonError> {
    let e = reasoner.adapter_w.ncols();
    if z_packet.len() != e || inputs.text.ncols() != e {
        return Err(ReasonError::Shape(format!(
            "adapter reads {e}-dim embeddings, got packet {} / text {}",
            z_packet.len(),
            inputs.text.ncols()
        )));
    }
    let mut x0 = inputs.text.clone();
    x0.row_mut(inputs.graph.sensor).assign(&standardize(z_packet));
    FeatureAssignment::new(&inputs.graph, adapt(x0.view(), reasoner))
}

/// `x ← W x + b` on every node, with the parameters of layer `layer` (0-based).
pub fn layer_transform<F: Scalar>(
    fa: &FeatureAssignment<F>,
    reasoner: &MissionReasoner<F>,
    layer: usize,
) -> Result<FeatureAssignment<F>, ReasonError> {
    let l = reasoner
        .layers
        .get(layer)
        .ok_or_else(|| ReasonError::Config(format!("layer {layer} of {}", reasoner.layers.len())))?;
    if l.w.ncols() != fa.dim() {
        return Err(ReasonError::Shape(format!("layer expects {} features, got {}", l.w.ncols(), fa.dim())));
    }
    Ok(FeatureAssignment {
        ids: fa.ids.clone(),
        hierarchy: fa.hierarchy.clone(),
        features: fa.features.dot(&l.w.t()) + &l.b,
    })
}

/// One synchronous round: every node with previous-level predecessors
/// becomes the mean of `φ(x_v ∘ x_u)` over them, computed from pre-round
/// values; other nodes keep their features.
pub fn message_pass<F: Scalar>(
    graph: &GraphIndex,
    fa: &FeatureAssignment<F>,
    act: Activation,
    combine: Combine,
) -> FeatureAssignment<F> {
    FeatureAssignment {
        ids: fa.ids.clone(),
        hierarchy: fa.hierarchy.clone(),
        features: message_pass_fwd(fa.features.view(), &graph.preds, act, combine),
    }
}

/// Frame token for one packet: embedding-node features of every mission,
/// concatenated in model order.
pub fn mission_forward<F: Scalar>(
    inputs: &[MissionInputs<F>],
    z_packet: ArrayView1<'_, F>,
    model: &ReasonerModel<F>,
) -> Result<Array1<F>, ReasonError> {
    if inputs.len() != model.missions.len() {
        return Err(ReasonError::Config(format!(
            "{} mission graphs for {} trained missions",
            inputs.len(),
            model.missions.len()
        )));
    }
    let mut parts = Vec::with_capacity(inputs.len());
    for (inp, r) in inputs.iter().zip(&model.missions) {
        if inp.mission != r.mission {
            return Err(ReasonError::Config(format!("graph `{}` where `{}` was expected", inp.mission, r.mission)));
        }
        let mut fa = init_node_features(inp, z_packet, r)?;
        for l in 0..r.layers.len() {
            fa = layer_transform(&fa, r, l)?;
            fa = message_pass(&inp.graph, &fa, model.config.activation, model.config.combine);
        }
        parts.push(fa.features.row(inp.graph.embedding).to_owned());
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("1-d concatenation"))
}

pub(crate) fn linear<F: Scalar>(x: ArrayView2<'_, F>, w: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    x.dot(&w.t()) + b
}

pub(crate) fn layer_norm<F: Scalar>(x: ArrayView2<'_, F>, g: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    normalize_rows(x).0 * g + b
}

/// Residual, norm, feed-forward, norm, given the attention output.
pub(crate) fn block_tail<F: Scalar>(x: ArrayView2<'_, F>, att: ArrayView2<'_, F>, b: &EncoderBlock<F>) -> Array2<F> {
    let h1 = layer_norm((&x + &linear(att, &b.wo, &b.bo)).view(), &b.ln1_g, &b.ln1_b);
    let ff = linear(linear(h1.view(), &b.ff1_w, &b.ff1_b).mapv(|v| v.max(F::zero())).view(), &b.ff2_w, &b.ff2_b);
    layer_norm((&h1 + &ff).view(), &b.ln2_g, &b.ln2_b)
}

pub(crate) fn block_forward<F: Scalar>(x: ArrayView2<'_, F>, b: &EncoderBlock<F>, heads: usize, window: usize) -> Array2<F> {
    let q = linear(x, &b.wq, &b.bq);
    let k = linear(x, &b.wk, &b.bk);
    let v = linear(x, &b.wv, &b.bv);
    let (att, _) = attention_fwd(q.view(), k.view(), v.view(), heads, window);
    block_tail(x, att.view(), b)
}

/// Mean pool over positions, then the classifier MLP.
pub(crate) fn classify<F: Scalar>(h: ArrayView2<'_, F>, head: &TemporalHead<F>) -> Array1<F> {
    let pooled = h.mean_axis(Axis(0)).expect("non-empty window").insert_axis(Axis(0));
    let hid = linear(pooled.view(), &head.cls1_w, &head.cls1_b).mapv(|v| v.max(F::zero()));
    linear(hid.view(), &head.cls2_w, &head.cls2_b).row(0).to_owned()
}

fn check_window<F: Scalar>(tokens: ArrayView2<'_, F>, head: &TemporalHead<F>) -> Result<(), ReasonError> {
    if tokens.dim() != (head.window(), head.token_dim()) {
        return Err(ReasonError::Shape(format!(
            "window of {:?} tokens, expected {:?}",
            tokens.dim(),
            (head.window(), head.token_dim())
        )));
    }
    Ok(())
}

/// Class logits for one window of `window × token_dim` frame tokens.
pub fn temporal_logits<F: Scalar>(tokens: ArrayView2<'_, F>, head: &TemporalHead<F>) -> Result<Array1<F>, ReasonError> {
    check_window(tokens, head)?;
    let mut h = linear(tokens, &head.in_w, &head.in_b) + &head.pos;
    for b in &head.blocks {
        h = block_forward(h.view(), b, head.heads, head.window());
    }
    Ok(classify(h.view(), head))
}

/// Class probabilities for one window.
pub fn temporal_forward<F: Scalar>(tokens: ArrayView2<'_, F>, head: &TemporalHead<F>) -> Result<Array1<F>, ReasonError> {
    let logits = temporal_logits(tokens, head)?;
    Ok(softmax_rows(logits.view().insert_axis(Axis(0))).row(0).to_owned())
}

/// Left-pads `tokens` (oldest first) to `window` rows by repeating the first one.
#[cfg(test)]
pub(crate) fn pad_window<F: Scalar>(tokens: ArrayView2<'_, F>, window: usize) -> Array2<F> {
    let n = tokens.nrows();
    if n >= window {
        return tokens.slice(ndarray::s![n - window.., ..]).to_owned();
    }
    let mut out = Array2::zeros((window, tokens.ncols()));
    for r in 0..window {
        out.row_mut(r).assign(&tokens.row((r + n).saturating_sub(window)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{assemble_graph, ConceptLayer};
    use crate::reason::ReasonerConfig;
    use ndarray::s;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn small_cfg() -> ReasonerConfig {
        ReasonerConfig {
            node_dim: 4,
            d_model: 8,
            heads: 2,
            window: 3,
            d_ff: 8,
            cls_hidden: 5,
            ..ReasonerConfig::default()
        }
    }

    fn kg(mission: &str, l1: &[&str], l2: &[&str]) -> KnowledgeGraph {
        assemble_graph(
            mission,
            vec![
                ConceptLayer { index: 1, concepts: names(l1) },
                ConceptLayer { index: 2, concepts: names(l2) },
            ],
        )
        .unwrap()
    }

    fn random_inputs(kg: &KnowledgeGraph, e: usize, seed: u64) -> MissionInputs<f64> {
        let g = GraphIndex::from_kg(kg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = Array2::from_shape_fn((g.len(), e), |_| rng.gen_range(-1.0..1.0));
        MissionInputs::from_parts(&kg.mission, g, text).unwrap()
    }

    #[test]
    fn concept_features_static_sensor_varies() {
        let g = kg("dos", &["a", "b"], &["c"]);
        let inp = random_inputs(&g, 6, 1);
        let m = ReasonerModel::<f64>::init(&small_cfg(), &names(&["dos"]), &names(&["x", "y"]), 6).unwrap();
        let p1 = Array1::from_vec(vec![1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
        let p2 = Array1::from_vec(vec![0.0, 3.0, 0.0, 1.0, 1.0, 0.0]);
        let a = init_node_features(&inp, p1.view(), &m.missions[0]).unwrap();
        let b = init_node_features(&inp, p2.view(), &m.missions[0]).unwrap();
        assert_ne!(a.features.row(0), b.features.row(0));
        assert_eq!(a.features.slice(s![1.., ..]), b.features.slice(s![1.., ..]));
        assert_eq!(init_node_features(&inp, p1.view(), &m.missions[0]).unwrap(), a);
    }

    #[test]
    fn identity_adapter_passes_embedding_through() {
        let g = kg("dos", &["a"], &["b"]);
        let inp = random_inputs(&g, 4, 2);
        let mut m = ReasonerModel::<f64>::init(&small_cfg(), &names(&["dos"]), &names(&["x", "y"]), 4).unwrap();
        m.missions[0].adapter_w = Array2::eye(4);
        // norm 2 = sqrt(4): standardization leaves it alone
        let z = Array1::from_vec(vec![1.0, -1.0, 1.0, 1.0]);
        let fa = init_node_features(&inp, z.view(), &m.missions[0]).unwrap();
        assert_eq!(fa.get("dos/sensor").unwrap(), z.view());
    }

    #[test]
    fn layer_transform_cases() {
        let g = kg("m", &["a", "b"], &["c"]);
        let inp = random_inputs(&g, 4, 3);
        let mut m = ReasonerModel::<f64>::init(&small_cfg(), &names(&["m"]), &names(&["x", "y"]), 4).unwrap();
        let fa = init_node_features(&inp, Array1::ones(4).view(), &m.missions[0]).unwrap();
        let r = &mut m.missions[0];
        r.layers[0].w = Array2::eye(4);
        r.layers[0].b = Array2::zeros((1, 4));
        assert_eq!(layer_transform(&fa, r, 0).unwrap(), fa);
        r.layers[0].w = Array2::zeros((4, 4));
        r.layers[0].b = Array2::from_elem((1, 4), 0.5);
        assert!(layer_transform(&fa, r, 0).unwrap().features.iter().all(|&v| v == 0.5));
        // independent matrix-vector products
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        r.layers[1].w = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        r.layers[1].b = Array2::from_shape_fn((1, 4), |_| rng.gen_range(-1.0..1.0));
        let out = layer_transform(&fa, r, 1).unwrap();
        for v in 0..fa.features.nrows() {
            for i in 0..4 {
                let mut acc = r.layers[1].b[[0, i]];
                for j in 0..4 {
                    acc += r.layers[1].w[[i, j]] * fa.features[[v, j]];
                }
                assert!((out.features[[v, i]] - acc).abs() < 1e-12);
            }
        }
        assert!(layer_transform(&fa, r, 7).is_err());
    }

    #[test]
    fn message_pass_identity_and_cancellation() {
        // 0 -> 1 ; 1 -> 2, 3 -> 2 (3 is a second level-1 node fed by 0)
        let g = GraphIndex::from_edges(4, &[(0, 1), (0, 3), (1, 2), (3, 2)], 0, 2).unwrap();
        let x = Array2::from_shape_vec((4, 2), vec![1.0, 1.0, 0.3, -0.7, 0.2, 0.9, -0.3, 0.7]).unwrap();
        let fa = FeatureAssignment::new(&g, x.clone()).unwrap();
        let out = message_pass(&g, &fa, Activation::Identity, Combine::Elementwise);
        // node 1 has the all-ones sensor as sole predecessor
        assert_eq!(out.features.row(1), x.row(1));
        assert_eq!(out.features.row(2), ndarray::arr1(&[0.0, 0.0]));
        assert_eq!(out.features.row(0), x.row(0));
    }

    #[test]
    fn token_lengths_and_concept_permutation() {
        let kgs = [kg("a", &["p", "q", "r"], &["s", "t"]), kg("b", &["u"], &["v", "w"]), kg("c", &["x", "y"], &["z"])];
        let m = ReasonerModel::<f64>::init(&small_cfg(), &names(&["a", "b", "c"]), &names(&["x", "y"]), 5).unwrap();
        let inputs: Vec<_> = kgs.iter().enumerate().map(|(i, k)| random_inputs(k, 5, i as u64)).collect();
        let z = ndarray::arr1(&[0.3, -0.1, 0.8, 0.5, -0.4]);
        let tok = mission_forward(&inputs, z.view(), &m).unwrap();
        assert_eq!(tok.len(), 12);
        let one = ReasonerModel::<f64>::init(&small_cfg(), &names(&["a"]), &names(&["x", "y"]), 5).unwrap();
        assert_eq!(mission_forward(&inputs[..1], z.view(), &one).unwrap().len(), 4);

        // reversing the first concept layer (and its text rows) leaves x_emb alone
        let k = &kgs[0];
        let mut rev = k.clone();
        rev.layers[0].concepts.reverse();
        let rev = assemble_graph("a", rev.layers).unwrap();
        let mut inp_rev = inputs[0].clone();
        inp_rev.graph = GraphIndex::from_kg(&rev).unwrap();
        for i in 0..3 {
            inp_rev.text.row_mut(1 + i).assign(&inputs[0].text.row(3 - i));
        }
        let a = mission_forward(&inputs[..1], z.view(), &one).unwrap();
        let b = mission_forward(std::slice::from_ref(&inp_rev), z.view(), &one).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_properties() {
        let m = ReasonerModel::<f64>::init(&small_cfg(), &names(&["a"]), &names(&["x", "y", "z"]), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-2.0..2.0));
            let p = temporal_forward(t.view(), &m.head).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
        // zero final layer: equal logits give a uniform distribution, and a
        // constant bias shift changes nothing
        let mut h = m.head.clone();
        h.cls2_w.fill(0.0);
        let t = Array2::ones((3, 4));
        let p = temporal_forward(t.view(), &h).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        let mut h2 = m.head.clone();
        let base = temporal_forward(t.view(), &h2).unwrap();
        h2.cls2_b += 7.5;
        let shifted = temporal_forward(t.view(), &h2).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(temporal_forward(Array2::<f64>::ones((2, 4)).view(), &m.head).is_err());
    }

    #[test]
    fn padding_repeats_earliest() {
        let t = Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap();
        assert_eq!(pad_window(t.view(), 4).column(0).to_vec(), vec![1.0, 1.0, 1.0, 2.0]);
        let t = Array2::from_shape_vec((5, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(pad_window(t.view(), 3).column(0).to_vec(), vec![3.0, 4.0, 5.0]);
    }
}
