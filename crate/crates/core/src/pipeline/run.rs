use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::stages::{self, Dataset, EvalReport};
use super::PipelineError;
use crate::contrastive::{EncoderPair, HeadsCheckpoint, SslHeads};
use crate::ingest::Split;
use crate::kg::KnowledgeGraph;
use crate::reason::{write_scores, ReasonerCheckpoint, ReasonerModel, ScoreRecord};
use crate::textgen::PairedCorpus;

pub const MANIFEST: &str = "manifest.json";
pub const ARTIFACT_DATASET: &str = "dataset.json";
pub const ARTIFACT_KGS: &str = "kgs.json";
pub const ARTIFACT_CORPUS: &str = "corpus.jsonl";
pub const ARTIFACT_HEADS: &str = "heads.json";
pub const ARTIFACT_REASONER: &str = "reasoner.json";
pub const ARTIFACT_EVAL: &str = "eval.json";
pub const ARTIFACT_SCORES: &str = "scores.jsonl";
const ARTIFACT_CORPUS_REPORT: &str = "corpus_report.json";
const ARTIFACT_PRETRAIN_LOG: &str = "pretrain_log.jsonl";
const ARTIFACT_TRAIN_LOG: &str = "train_log.json";

/// Stage names in execution order.
pub const STAGES: [&str; 6] = ["ingest", "kg", "corpus", "pretrain", "train", "evaluate"];

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHash {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Hash of the configuration sections this stage and its inputs read.
    pub config_hash: String,
    pub artifacts: Vec<ArtifactHash>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        read_json(path.as_ref())
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Reuse stages whose artifacts and configuration are unchanged.
    pub resume: bool,
    /// Last stage to run; all stages when `None`.
    pub until: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    /// Present when the evaluation stage was reached.
    pub report: Option<EvalReport>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String, PipelineError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let bytes = serde_json::to_vec_pretty(v).map_err(|e| PipelineError::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn section_hash(cfg: &PipelineConfig, upto: usize) -> String {
    let sections = [
        serde_json::json!([cfg.seed, cfg.data, cfg.max_payload_len, cfg.grouping]),
        serde_json::json!([cfg.kg, cfg.concepts]),
        serde_json::json!([cfg.corpus, cfg.paraphrase, cfg.eval.test_fraction, cfg.eval.train_fraction]),
        serde_json::json!([cfg.encoders, cfg.contrastive]),
        serde_json::json!([cfg.reasoner]),
        serde_json::json!([cfg.eval]),
    ];
    let v = serde_json::Value::Array(sections[..=upto].to_vec());
    hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("config serializes")))
}

fn stage_artifacts(stage: &str) -> &'static [&'static str] {
    match stage {
        "ingest" => &[ARTIFACT_DATASET],
        "kg" => &[ARTIFACT_KGS],
        "corpus" => &[ARTIFACT_CORPUS, ARTIFACT_CORPUS_REPORT],
        "pretrain" => &[ARTIFACT_HEADS, ARTIFACT_PRETRAIN_LOG],
        "train" => &[ARTIFACT_REASONER, ARTIFACT_TRAIN_LOG],
        "evaluate" => &[ARTIFACT_EVAL, ARTIFACT_SCORES],
        _ => &[],
    }
}

/// Artifacts still on disk with the recorded hashes.
fn record_holds(dir: &Path, rec: &StageRecord) -> bool {
    rec.artifacts
        .iter()
        .all(|a| sha256_file(dir.join(&a.path)).is_ok_and(|h| h == a.sha256))
}

/// Lazily loaded stage outputs.
struct State<'a> {
    dir: &'a Path,
    cfg: &'a PipelineConfig,
    enc: EncoderPair,
    dataset: Option<Dataset>,
    kgs: Option<BTreeMap<String, KnowledgeGraph>>,
    split: Option<Split>,
    corpus: Option<PairedCorpus>,
    heads: Option<SslHeads<f64>>,
    model: Option<ReasonerModel<f64>>,
}

impl<'a> State<'a> {
    fn new(cfg: &'a PipelineConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            dir: cfg.output.as_path(),
            cfg,
            enc: cfg.encoders.build()?,
            dataset: None,
            kgs: None,
            split: None,
            corpus: None,
            heads: None,
            model: None,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn dataset(&mut self) -> Result<&Dataset, PipelineError> {
        if self.dataset.is_none() {
            self.dataset = Some(read_json(&self.path(ARTIFACT_DATASET))?);
        }
        Ok(self.dataset.as_ref().expect("loaded"))
    }

    fn kgs(&mut self) -> Result<&BTreeMap<String, KnowledgeGraph>, PipelineError> {
        if self.kgs.is_none() {
            self.kgs = Some(load_kgs(&self.path(ARTIFACT_KGS))?);
        }
        Ok(self.kgs.as_ref().expect("loaded"))
    }

    fn split(&mut self) -> Result<&Split, PipelineError> {
        if self.split.is_none() {
            let cfg = self.cfg;
            let s = stages::split(cfg, self.dataset()?, cfg.eval.train_fraction)?;
            self.split = Some(s);
        }
        Ok(self.split.as_ref().expect("loaded"))
    }

    fn corpus(&mut self) -> Result<&PairedCorpus, PipelineError> {
        if self.corpus.is_none() {
            let p = self.path(ARTIFACT_CORPUS);
            self.corpus = Some(PairedCorpus::load(&p).map_err(|e| PipelineError::io(&p, e))?);
        }
        Ok(self.corpus.as_ref().expect("loaded"))
    }

    fn heads(&mut self) -> Result<&SslHeads<f64>, PipelineError> {
        if self.heads.is_none() {
            let p = self.path(ARTIFACT_HEADS);
            let ck = HeadsCheckpoint::load(&p).map_err(|e| PipelineError::io(&p, e))?;
            self.heads = Some(SslHeads::from_checkpoint(&ck).map_err(|e| PipelineError::io(&p, e))?);
        }
        Ok(self.heads.as_ref().expect("loaded"))
    }

    fn model(&mut self) -> Result<&ReasonerModel<f64>, PipelineError> {
        if self.model.is_none() {
            let p = self.path(ARTIFACT_REASONER);
            let ck = ReasonerCheckpoint::load(&p).map_err(|e| PipelineError::io(&p, e))?;
            self.model = Some(ReasonerModel::from_checkpoint(&ck).map_err(|e| PipelineError::io(&p, e))?);
        }
        Ok(self.model.as_ref().expect("loaded"))
    }

    fn run(&mut self, stage: &str) -> Result<Option<EvalReport>, PipelineError> {
        let cfg = self.cfg;
        match stage {
            "ingest" => {
                let d = stages::ingest(cfg)?;
                write_json(&self.path(ARTIFACT_DATASET), &d)?;
                self.dataset = Some(d);
                self.split = None;
            }
            "kg" => {
                let missions = stages::missions(&self.dataset()?.classes);
                let kgs = stages::build_graphs(cfg, &missions)?;
                let docs: Vec<serde_json::Value> = kgs.values().map(KnowledgeGraph::to_json).collect();
                write_json(&self.path(ARTIFACT_KGS), &docs)?;
                self.kgs = Some(kgs);
            }
            "corpus" => {
                self.kgs()?;
                self.split()?;
                let (data, kgs, split) = (
                    self.dataset.as_ref().expect("loaded"),
                    self.kgs.as_ref().expect("loaded"),
                    self.split.as_ref().expect("loaded"),
                );
                let (corpus, report) = stages::build_training_corpus(cfg, data, &split.train, kgs)?;
                let p = self.path(ARTIFACT_CORPUS);
                corpus.save(&p).map_err(|e| PipelineError::io(&p, e))?;
                write_json(&self.path(ARTIFACT_CORPUS_REPORT), &report)?;
                self.corpus = Some(corpus);
            }
            "pretrain" => {
                let out = {
                    let corpus = self.corpus()?.clone();
                    stages::pretrain(cfg, &corpus, &self.enc)?
                };
                let p = self.path(ARTIFACT_HEADS);
                out.heads.to_checkpoint().save(&p).map_err(|e| PipelineError::io(&p, e))?;
                let p = self.path(ARTIFACT_PRETRAIN_LOG);
                let mut log = String::new();
                for (step, loss) in out.losses.iter().enumerate() {
                    log.push_str(&serde_json::json!({ "step": step, "loss": loss }).to_string());
                    log.push('\n');
                }
                std::fs::write(&p, log).map_err(|e| PipelineError::io(&p, e))?;
                self.heads = Some(out.heads);
            }
            "train" => {
                self.kgs()?;
                self.split()?;
                self.heads()?;
                let classes = self.dataset()?.classes.clone();
                let trained = stages::train(
                    cfg,
                    &classes,
                    &self.split.as_ref().expect("loaded").train,
                    self.kgs.as_ref().expect("loaded"),
                    self.heads.as_ref().expect("loaded"),
                    &self.enc,
                )?;
                let p = self.path(ARTIFACT_REASONER);
                trained.model.to_checkpoint().save(&p).map_err(|e| PipelineError::io(&p, e))?;
                write_json(&self.path(ARTIFACT_TRAIN_LOG), &trained.log)?;
                self.model = Some(trained.model);
            }
            "evaluate" => {
                self.kgs()?;
                self.split()?;
                self.heads()?;
                self.model()?;
                let classes = self.dataset()?.classes.clone();
                let (report, scores) = stages::evaluate(
                    cfg,
                    &classes,
                    self.split.as_ref().expect("loaded"),
                    self.kgs.as_ref().expect("loaded"),
                    self.heads.as_ref().expect("loaded"),
                    &self.enc,
                    self.model.as_ref().expect("loaded"),
                )?;
                write_json(&self.path(ARTIFACT_EVAL), &report)?;
                let p = self.path(ARTIFACT_SCORES);
                write_scores(&p, &scores).map_err(|e| PipelineError::io(&p, e))?;
                return Ok(Some(report));
            }
            other => return Err(PipelineError::Config(format!("unknown stage `{other}`"))),
        }
        Ok(None)
    }
}

/// Reads the graphs written by the `kg` stage, keyed by mission.
pub(crate) fn load_kgs(path: &Path) -> Result<BTreeMap<String, KnowledgeGraph>, PipelineError> {
    let docs: Vec<serde_json::Value> = read_json(path)?;
    docs.iter()
        .map(|d| {
            let kg = KnowledgeGraph::from_json(d).map_err(|e| PipelineError::io(path, e))?;
            Ok((kg.mission.clone(), kg))
        })
        .collect()
}

/// Runs the stages in order, writing artifacts and `manifest.json` into the
/// output directory. With `resume`, a stage is skipped when its recorded
/// configuration hash and artifact hashes still match and nothing upstream
/// was recomputed. The manifest is rewritten after every stage, so a failed
/// run leaves a record of what completed.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let last = match &opts.until {
        Some(u) => STAGES
            .iter()
            .position(|s| s == u)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage `{u}`")))?,
        None => STAGES.len() - 1,
    };
    let dir = cfg.output.as_path();
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    let prev = if opts.resume && manifest_path.exists() {
        Some(Manifest::load(&manifest_path)?)
    } else {
        None
    };

    let mut state = State::new(cfg)?;
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        config_hash: cfg.fingerprint(),
        stages: Vec::new(),
    };
    let mut summary = RunSummary {
        executed: Vec::new(),
        skipped: Vec::new(),
        report: None,
    };
    let mut dirty = false;
    for (i, &stage) in STAGES.iter().enumerate().take(last + 1) {
        let hash = section_hash(cfg, i);
        let reusable = !dirty
            && prev
                .as_ref()
                .and_then(|m| m.stage(stage))
                .is_some_and(|r| r.config_hash == hash && record_holds(dir, r));
        if reusable {
            log::info!("stage `{stage}` up to date");
            manifest.stages.push(prev.as_ref().and_then(|m| m.stage(stage)).expect("checked").clone());
            summary.skipped.push(stage.to_string());
            if stage == "evaluate" {
                summary.report = Some(read_json(&dir.join(ARTIFACT_EVAL))?);
            }
            continue;
        }
        dirty = true;
        log::info!("running stage `{stage}`");
        match state.run(stage) {
            Ok(report) => {
                if report.is_some() {
                    summary.report = report;
                }
            }
            Err(e) => {
                write_json(&manifest_path, &manifest)?;
                return Err(match e {
                    PipelineError::Stage { .. } => e,
                    other => PipelineError::stage(stage, other),
                });
            }
        }
        let mut artifacts = Vec::new();
        for name in stage_artifacts(stage) {
            artifacts.push(ArtifactHash {
                path: name.to_string(),
                sha256: sha256_file(dir.join(name))?,
            });
        }
        manifest.stages.push(StageRecord {
            stage: stage.to_string(),
            config_hash: hash,
            artifacts,
        });
        summary.executed.push(stage.to_string());
        write_json(&manifest_path, &manifest)?;
    }
    if !dirty {
        if let Some(p) = &prev {
            manifest.stages.extend(p.stages.iter().skip(last + 1).cloned());
        }
    }
    write_json(&manifest_path, &manifest)?;
    Ok(summary)
}

/// Brings the run up to a trained reasoner (reusing what is current) and
/// scores the held-out split packet by packet.
pub fn infer(cfg: &PipelineConfig) -> Result<Vec<ScoreRecord>, PipelineError> {
    run_pipeline(
        cfg,
        &RunOptions {
            resume: true,
            until: Some("train".into()),
        },
    )?;
    let mut state = State::new(cfg)?;
    state.kgs()?;
    state.split()?;
    state.heads()?;
    state.model()?;
    let classes = state.dataset()?.classes.clone();
    stages::score_sequence(
        &classes,
        &state.split.as_ref().expect("loaded").test,
        state.kgs.as_ref().expect("loaded"),
        state.heads.as_ref().expect("loaded"),
        &state.enc,
        state.model.as_ref().expect("loaded"),
    )
}
