use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ReasonError, ReasonerConfig};
use crate::derive_seed;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayer<F: Scalar> {
    /// `D × D`
    pub w: Array2<F>,
    /// `1 × D`
    pub b: Array2<F>,
}

/// Parameters of one mission graph: the adapter from the shared embedding
/// space into node features, and the per-layer transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionReasoner<F: Scalar> {
    pub mission: String,
    /// `D × embed_dim`
    pub adapter_w: Array2<F>,
    /// `1 × D`
    pub adapter_b: Array2<F>,
    pub layers: Vec<GnnLayer<F>>,
}

/// Post-norm transformer encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<F: Scalar> {
    pub wq: Array2<F>,
    pub bq: Array2<F>,
    pub wk: Array2<F>,
    pub bk: Array2<F>,
    pub wv: Array2<F>,
    pub bv: Array2<F>,
    pub wo: Array2<F>,
    pub bo: Array2<F>,
    pub ln1_g: Array2<F>,
    pub ln1_b: Array2<F>,
    pub ff1_w: Array2<F>,
    pub ff1_b: Array2<F>,
    pub ff2_w: Array2<F>,
    pub ff2_b: Array2<F>,
    pub ln2_g: Array2<F>,
    pub ln2_b: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalHead<F: Scalar> {
    /// `d_model × (M·D)`
    pub in_w: Array2<F>,
    pub in_b: Array2<F>,
    /// Learned positional encodings, `window × d_model`.
    pub pos: Array2<F>,
    pub blocks: Vec<EncoderBlock<F>>,
    pub cls1_w: Array2<F>,
    pub cls1_b: Array2<F>,
    pub cls2_w: Array2<F>,
    pub cls2_b: Array2<F>,
    pub heads: usize,
}

impl<F: Scalar> TemporalHead<F> {
    pub fn window(&self) -> usize {
        self.pos.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.in_w.nrows()
    }

    pub fn token_dim(&self) -> usize {
        self.in_w.ncols()
    }

    pub fn classes(&self) -> usize {
        self.cls2_w.nrows()
    }
}

/// Everything the reasoner learns, plus the orderings needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerModel<F: Scalar> {
    pub config: ReasonerConfig,
    /// Width of the packet/text embeddings the adapters read.
    pub embed_dim: usize,
    pub classes: Vec<String>,
    pub missions: Vec<MissionReasoner<F>>,
    pub head: TemporalHead<F>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform<F: Scalar>(&mut self, rows: usize, cols: usize, bound: f64) -> Array2<F> {
        Array2::from_shape_fn((rows, cols), |_| F::of(self.rng.gen_range(-bound..=bound)))
    }

    /// `out × in` weight, uniform in `±gain/sqrt(in)`.
    fn weight<F: Scalar>(&mut self, out: usize, inp: usize, gain: f64) -> Array2<F> {
        self.uniform(out, inp, gain / (inp.max(1) as f64).sqrt())
    }
}

fn zeros<F: Scalar>(n: usize) -> Array2<F> {
    Array2::zeros((1, n))
}

fn ones<F: Scalar>(n: usize) -> Array2<F> {
    Array2::from_elem((1, n), F::one())
}

impl<F: Scalar> ReasonerModel<F> {
    /// Seeded initialization. Adapter and GNN weights preserve unit variance
    /// (`±sqrt(3/in)`); everything else uses `±1/sqrt(in)`. GNN biases start
    /// at `gnn_bias_init`, other biases at zero, layer-norm gains at one.
    pub fn init(cfg: &ReasonerConfig, missions: &[String], classes: &[String], embed_dim: usize) -> Result<Self, ReasonError> {
        cfg.validate()?;
        if missions.is_empty() {
            return Err(ReasonError::Config("at least one mission graph is required".into()));
        }
        if classes.len() < 2 {
            return Err(ReasonError::Config(format!("need at least 2 classes, got {}", classes.len())));
        }
        let d = cfg.node_dim;
        let dm = cfg.d_model;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7265_6173)),
        };
        let unit = 3f64.sqrt();
        let missions = missions
            .iter()
            .map(|m| MissionReasoner {
                mission: m.clone(),
                adapter_w: init.weight(d, embed_dim, unit),
                adapter_b: zeros(d),
                layers: (0..cfg.gnn_layers)
                    .map(|_| GnnLayer {
                        w: init.weight(d, d, unit),
                        b: Array2::from_elem((1, d), F::of(cfg.gnn_bias_init)),
                    })
                    .collect(),
            })
            .collect::<Vec<_>>();
        let token = missions.len() * d;
        let in_w = init.weight(dm, token, 1.0);
        let pos = init.uniform(cfg.window, dm, 0.05);
        let blocks = (0..cfg.depth)
            .map(|_| EncoderBlock {
                wq: init.weight(dm, dm, 1.0),
                bq: zeros(dm),
                wk: init.weight(dm, dm, 1.0),
                bk: zeros(dm),
                wv: init.weight(dm, dm, 1.0),
                bv: zeros(dm),
                wo: init.weight(dm, dm, 1.0),
                bo: zeros(dm),
                ln1_g: ones(dm),
                ln1_b: zeros(dm),
                ff1_w: init.weight(cfg.d_ff, dm, 1.0),
                ff1_b: zeros(cfg.d_ff),
                ff2_w: init.weight(dm, cfg.d_ff, 1.0),
                ff2_b: zeros(dm),
                ln2_g: ones(dm),
                ln2_b: zeros(dm),
            })
            .collect();
        let head = TemporalHead {
            in_w,
            in_b: zeros(dm),
            pos,
            blocks,
            cls1_w: init.weight(cfg.cls_hidden, dm, 1.0),
            cls1_b: zeros(cfg.cls_hidden),
            cls2_w: init.weight(classes.len(), cfg.cls_hidden, 1.0),
            cls2_b: zeros(classes.len()),
            heads: cfg.heads,
        };
        Ok(Self {
            config: *cfg,
            embed_dim,
            classes: classes.to_vec(),
            missions,
            head,
        })
    }

    pub fn mission_names(&self) -> Vec<String> {
        self.missions.iter().map(|m| m.mission.clone()).collect()
    }

    pub fn token_dim(&self) -> usize {
        self.missions.len() * self.config.node_dim
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(&str, &Array2<F>)) {
        for m in &self.missions {
            f(&format!("mission.{}.adapter_w", m.mission), &m.adapter_w);
            f(&format!("mission.{}.adapter_b", m.mission), &m.adapter_b);
            for (l, layer) in m.layers.iter().enumerate() {
                f(&format!("mission.{}.layer{l}.w", m.mission), &layer.w);
                f(&format!("mission.{}.layer{l}.b", m.mission), &layer.b);
            }
        }
        let h = &self.head;
        f("head.in_w", &h.in_w);
        f("head.in_b", &h.in_b);
        f("head.pos", &h.pos);
        for (i, b) in h.blocks.iter().enumerate() {
            for (name, t) in block_tensors(b) {
                f(&format!("head.block{i}.{name}"), t);
            }
        }
        f("head.cls1_w", &h.cls1_w);
        f("head.cls1_b", &h.cls1_b);
        f("head.cls2_w", &h.cls2_w);
        f("head.cls2_b", &h.cls2_b);
    }

    /// Mutable twin of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<F>)) {
        for m in &mut self.missions {
            f(&format!("mission.{}.adapter_w", m.mission), &mut m.adapter_w);
            f(&format!("mission.{}.adapter_b", m.mission), &mut m.adapter_b);
            for (l, layer) in m.layers.iter_mut().enumerate() {
                f(&format!("mission.{}.layer{l}.w", m.mission), &mut layer.w);
                f(&format!("mission.{}.layer{l}.b", m.mission), &mut layer.b);
            }
        }
        let h = &mut self.head;
        f("head.in_w", &mut h.in_w);
        f("head.in_b", &mut h.in_b);
        f("head.pos", &mut h.pos);
        for (i, b) in h.blocks.iter_mut().enumerate() {
            for (name, t) in block_tensors_mut(b) {
                f(&format!("head.block{i}.{name}"), t);
            }
        }
        f("head.cls1_w", &mut h.cls1_w);
        f("head.cls1_b", &mut h.cls1_b);
        f("head.cls2_w", &mut h.cls2_w);
        f("head.cls2_b", &mut h.cls2_b);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut v = Vec::new();
        self.visit(|_, t| v.push(t.len()));
        v
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn param_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(|_, t| s += t.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>());
        s.sqrt()
    }

    pub fn to_checkpoint(&self) -> ReasonerCheckpoint {
        let mut tensors = Vec::new();
        self.visit(|name, t| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: [t.nrows(), t.ncols()],
                data: t.iter().map(|v| v.as_f64()).collect(),
            })
        });
        ReasonerCheckpoint {
            version: ReasonerCheckpoint::VERSION,
            config: self.config,
            embed_dim: self.embed_dim,
            missions: self.mission_names(),
            classes: self.classes.clone(),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &ReasonerCheckpoint) -> Result<Self, ReasonError> {
        if ck.version != ReasonerCheckpoint::VERSION {
            return Err(ReasonError::Version(ck.version));
        }
        let mut model = Self::init(&ck.config, &ck.missions, &ck.classes, ck.embed_dim)?;
        let mut it = ck.tensors.iter();
        let mut err = None;
        model.visit_mut(|name, t| {
            if err.is_some() {
                return;
            }
            match it.next() {
                Some(nt) if nt.name == name && nt.shape == [t.nrows(), t.ncols()] && nt.data.len() == t.len() => {
                    t.iter_mut().zip(&nt.data).for_each(|(d, &s)| *d = F::of(s));
                }
                Some(nt) => {
                    err = Some(ReasonError::Shape(format!(
                        "checkpoint tensor {} {:?} does not match {name} {:?}",
                        nt.name,
                        nt.shape,
                        t.dim()
                    )))
                }
                None => err = Some(ReasonError::Shape(format!("checkpoint is missing {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if it.next().is_some() {
            return Err(ReasonError::Shape("checkpoint has extra tensors".into()));
        }
        Ok(model)
    }
}

fn block_tensors<F: Scalar>(b: &EncoderBlock<F>) -> [(&'static str, &Array2<F>); 16] {
    [
        ("wq", &b.wq),
        ("bq", &b.bq),
        ("wk", &b.wk),
        ("bk", &b.bk),
        ("wv", &b.wv),
        ("bv", &b.bv),
        ("wo", &b.wo),
        ("bo", &b.bo),
        ("ln1_g", &b.ln1_g),
        ("ln1_b", &b.ln1_b),
        ("ff1_w", &b.ff1_w),
        ("ff1_b", &b.ff1_b),
        ("ff2_w", &b.ff2_w),
        ("ff2_b", &b.ff2_b),
        ("ln2_g", &b.ln2_g),
        ("ln2_b", &b.ln2_b),
    ]
}

fn block_tensors_mut<F: Scalar>(b: &mut EncoderBlock<F>) -> [(&'static str, &mut Array2<F>); 16] {
    [
        ("wq", &mut b.wq),
        ("bq", &mut b.bq),
        ("wk", &mut b.wk),
        ("bk", &mut b.bk),
        ("wv", &mut b.wv),
        ("bv", &mut b.bv),
        ("wo", &mut b.wo),
        ("bo", &mut b.bo),
        ("ln1_g", &mut b.ln1_g),
        ("ln1_b", &mut b.ln1_b),
        ("ff1_w", &mut b.ff1_w),
        ("ff1_b", &mut b.ff1_b),
        ("ff2_w", &mut b.ff2_w),
        ("ff2_b", &mut b.ff2_b),
        ("ln2_g", &mut b.ln2_g),
        ("ln2_b", &mut b.ln2_b),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major values.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerCheckpoint {
    pub version: u32,
    pub config: ReasonerConfig,
    pub embed_dim: usize,
    pub missions: Vec<String>,
    pub classes: Vec<String>,
    pub tensors: Vec<NamedTensor>,
}

impl ReasonerCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReasonError> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|source| ReasonError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReasonError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ReasonError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn default_parameter_count() {
        let m = ReasonerModel::<f64>::init(
            &ReasonerConfig::default(),
            &names(&["dos", "reconnaissance", "brute_force"]),
            &names(&["benign", "dos", "reconnaissance", "brute_force"]),
            128,
        )
        .unwrap();
        // per mission: adapter 8·128+8, three layers of 8·8+8
        let missions = 3 * (8 * 128 + 8 + 3 * (64 + 8));
        let block = 4 * (128 * 128 + 128) + 2 * (128 * 128 + 128) + 4 * 128;
        let head = (24 * 128 + 128) + 30 * 128 + block + (128 * 64 + 64) + (64 * 4 + 4);
        assert_eq!(m.param_count(), missions + head);
        assert_eq!(m.param_count(), 118_884);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = ReasonerConfig {
            d_model: 16,
            heads: 2,
            window: 3,
            d_ff: 8,
            cls_hidden: 4,
            ..ReasonerConfig::default()
        };
        let m = ReasonerModel::<f64>::init(&cfg, &names(&["a", "b"]), &names(&["x", "y", "z"]), 6).unwrap();
        let ck = m.to_checkpoint();
        assert_eq!(ck.param_count(), m.param_count());
        let json = serde_json::to_string(&ck).unwrap();
        let back = ReasonerModel::<f64>::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
        let mut bad = ck.clone();
        bad.tensors.pop();
        assert!(ReasonerModel::<f64>::from_checkpoint(&bad).is_err());
        bad = ck;
        bad.version = 9;
        assert!(matches!(ReasonerModel::<f64>::from_checkpoint(&bad), Err(ReasonError::Version(9))));
    }
}
