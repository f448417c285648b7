use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::contrastive::{EncoderPair, TrainConfig};
use crate::embed::{BaseEncoder, Modality, DEFAULT_BASE_DIM};
use crate::eval::{ProbeConfig, DEFAULT_FRACTIONS};
use crate::ingest::{SynthConfig, BENIGN, DEFAULT_MAX_PAYLOAD_LEN};
use crate::kg::{ConceptProvider, KgParams};
use crate::reason::ReasonerConfig;
use crate::textgen::ParaphraseProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub num_classes: usize,
    pub per_class: usize,
    pub informative_prob: f64,
    pub signal_fraction: f64,
    /// Inclusive range of single-class episode lengths.
    pub episode_len: [usize; 2],
}

impl Default for SynthSettings {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            num_classes: 4,
            per_class: 300,
            informative_prob: s.informative_prob,
            signal_fraction: s.signal_fraction,
            episode_len: [s.episode_len.0, s.episode_len.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synth(SynthSettings),
    Capture {
        pcap: PathBuf,
        flows: PathBuf,
        /// TOML column map; identity when absent.
        #[serde(default)]
        schema: Option<PathBuf>,
        /// Slack after a flow's end when attaching labels, seconds.
        #[serde(default = "default_align_window")]
        align_window_s: f64,
        /// Keep only bytes after the transport header.
        #[serde(default)]
        transport_payload: bool,
    },
}

fn default_align_window() -> f64 {
    1.0
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSettings::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSettings {
    /// Graph concepts mentioned in each description.
    pub concepts_per_text: usize,
    pub window_s: f64,
    /// Template library overriding the bundled one.
    pub templates: Option<PathBuf>,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            concepts_per_text: 2,
            window_s: 1.0,
            templates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub base_dim: usize,
    /// JSONL `{"id", "vec"}` vectors replacing the hashed packet encoder.
    pub packet_vectors: Option<PathBuf>,
    pub text_vectors: Option<PathBuf>,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            base_dim: DEFAULT_BASE_DIM,
            packet_vectors: None,
            text_vectors: None,
        }
    }
}

impl EncoderSettings {
    pub fn build(&self) -> Result<EncoderPair, PipelineError> {
        let make = |m: Modality, path: &Option<PathBuf>| match path {
            Some(p) => BaseEncoder::external(m, self.base_dim, p).map_err(|e| PipelineError::Config(e.to_string())),
            None => Ok(match m {
                Modality::Packet => BaseEncoder::hashed_packet(self.base_dim),
                Modality::Text => BaseEncoder::hashed_text(self.base_dim),
            }),
        };
        Ok(EncoderPair {
            text: make(Modality::Text, &self.text_vectors)?,
            packet: make(Modality::Packet, &self.packet_vectors)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Share of the sequence, from the end, held out for testing.
    pub test_fraction: f64,
    /// Stratified share of the remaining packets used for training.
    pub train_fraction: f64,
    pub sweep_fractions: Vec<f64>,
    pub top_k: Vec<usize>,
    pub probe: ProbeConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            train_fraction: 1.0,
            sweep_fractions: DEFAULT_FRACTIONS.to_vec(),
            top_k: vec![1, 5],
            probe: ProbeConfig::default(),
        }
    }
}

/// Fine attack labels folded into the coarse groups used for training.
pub fn default_grouping() -> BTreeMap<String, String> {
    [
        ("benign", BENIGN),
        ("os_scan", "reconnaissance"),
        ("vulnerability_scan", "reconnaissance"),
        ("port_scan", "reconnaissance"),
        ("icmp_flood", "dos"),
        ("slowloris", "dos"),
        ("syn_flood", "dos"),
        ("udp_flood", "dos"),
        ("dns_flood", "dos"),
        ("dictionary_attack", "brute_force"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

/// The whole run in one file. `seed` drives every stage; the `seed` fields
/// inside the training sections are overwritten with values derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataSource,
    pub max_payload_len: usize,
    /// Fine label -> training class. Labels that are already group names pass through.
    pub grouping: BTreeMap<String, String>,
    pub kg: KgParams,
    pub concepts: ConceptProvider,
    pub paraphrase: ParaphraseProvider,
    pub corpus: CorpusSettings,
    pub encoders: EncoderSettings,
    pub contrastive: TrainConfig,
    pub reasoner: ReasonerConfig,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("out"),
            data: DataSource::default(),
            max_payload_len: DEFAULT_MAX_PAYLOAD_LEN,
            grouping: default_grouping(),
            kg: KgParams::default(),
            concepts: ConceptProvider::default(),
            paraphrase: ParaphraseProvider::default(),
            corpus: CorpusSettings::default(),
            encoders: EncoderSettings::default(),
            contrastive: TrainConfig::default(),
            reasoner: ReasonerConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a TOML config; relative `output` and capture paths are resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&s)?;
        if let Some(dir) = path.parent() {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            resolve(&mut cfg.output);
            if let DataSource::Capture { pcap, flows, schema, .. } = &mut cfg.data {
                resolve(pcap);
                resolve(flows);
                if let Some(s) = schema {
                    resolve(s);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the parts that do not need the data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.contrastive.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.reasoner.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let e = &self.eval;
        if !(e.train_fraction > 0.0 && e.train_fraction <= 1.0) {
            return bad(format!("train_fraction {} outside (0, 1]", e.train_fraction));
        }
        if !(e.test_fraction > 0.0 && e.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", e.test_fraction));
        }
        if e.top_k.contains(&0) {
            return bad("top_k entries must be at least 1".into());
        }
        if let DataSource::Capture { pcap, flows, schema, .. } = &self.data {
            for p in [Some(pcap), Some(flows), schema.as_ref()].into_iter().flatten() {
                if !p.exists() {
                    return bad(format!("{} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output path cleared.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }
}
