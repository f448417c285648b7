use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, PipelineConfig};
use super::PipelineError;
use crate::contrastive::{pretrain_heads, template_prompts, EncoderPair, PretrainOutcome, SslHeads, ZeroShotClassifier};
use crate::derive_seed;
use crate::eval::{
    count_flops, scarcity_sweep, top_k_accuracy, CostReport, GraphShape, LogisticProbe, MetricReport, SweepPoint,
};
use crate::ingest::{
    align, read_flow_csv, read_pcap, split_dataset_with, synth_dataset_with, FlowRecord, LabeledSequence, PayloadMode,
    PcapOptions, SchemaMap, Split, SynthConfig, BENIGN,
};
use crate::kg::{generate_mission_graph, validate_graph, KnowledgeGraph};
use crate::reason::{
    infer_stream, label_indices, packet_embeddings, train_from, MissionInputs, ReasonerModel, ScoreRecord,
    TrainedReasoner,
};
use crate::textgen::{build_corpus, BuildReport, CorpusOptions, PairedCorpus, TemplateSet};

const SEED_SYNTH: u64 = 1;
const SEED_CORPUS: u64 = 2;
const SEED_SPLIT: u64 = 3;
const SEED_CONTRASTIVE: u64 = 4;
const SEED_REASONER: u64 = 5;

/// Labelled packets plus the flow table they were labelled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub sequence: LabeledSequence,
    pub flows: Vec<FlowRecord>,
    /// Packets no flow row claimed.
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub classes: Vec<String>,
    pub missions: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
    pub reasoner: MetricReport,
    /// Logistic regression on single packet embeddings.
    pub probe: MetricReport,
    /// Top-k accuracy of zero-shot ranking against class prompts.
    pub zero_shot: BTreeMap<usize, f64>,
    pub cost: CostReport,
}

/// Classes that get a mission graph and reasoner: all but benign.
pub fn missions(classes: &[String]) -> Vec<String> {
    classes.iter().filter(|c| *c != BENIGN).cloned().collect()
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let st = |e| PipelineError::stage("ingest", e);
    let (sequence, flows, unmatched) = match &cfg.data {
        DataSource::Synth(s) => {
            let data = synth_dataset_with(&SynthConfig {
                num_classes: s.num_classes,
                per_class: s.per_class,
                seed: derive_seed(cfg.seed, SEED_SYNTH),
                payload_len: cfg.max_payload_len,
                informative_prob: s.informative_prob,
                signal_fraction: s.signal_fraction,
                episode_len: (s.episode_len[0], s.episode_len[1]),
                ..SynthConfig::default()
            })
            .map_err(st)?;
            (data.sequence, data.flows, 0)
        }
        DataSource::Capture {
            pcap,
            flows,
            schema,
            align_window_s,
            transport_payload,
        } => {
            let packets = read_pcap(
                pcap,
                PcapOptions {
                    max_payload_len: cfg.max_payload_len,
                    payload_mode: if *transport_payload { PayloadMode::Transport } else { PayloadMode::Full },
                },
            )
            .map_err(st)?;
            let schema = match schema {
                Some(p) => SchemaMap::load(p).map_err(st)?,
                None => SchemaMap::default(),
            };
            let table = read_flow_csv(flows, &schema).map_err(st)?;
            if !table.row_errors.is_empty() {
                log::warn!("{} flow rows skipped", table.row_errors.len());
            }
            let out = align(&table.records, &packets, *align_window_s).map_err(st)?;
            (out.sequence, table.records, out.unmatched)
        }
    };
    let sequence = sequence.regroup(&cfg.grouping);
    let flows = flows
        .into_iter()
        .map(|mut f| {
            if let Some(g) = cfg.grouping.get(&f.label) {
                f.label.clone_from(g);
            }
            f
        })
        .collect();
    if sequence.is_empty() {
        return Err(PipelineError::stage("ingest", "no packets"));
    }
    Ok(Dataset {
        classes: sequence.class_set.clone(),
        sequence,
        flows,
        unmatched,
    })
}

/// One validated graph per mission.
pub fn build_graphs(cfg: &PipelineConfig, missions: &[String]) -> Result<BTreeMap<String, KnowledgeGraph>, PipelineError> {
    let st = |e| PipelineError::stage("kg", e);
    let mut out = BTreeMap::new();
    for m in missions {
        let (kg, report) = generate_mission_graph(m, &cfg.kg, &cfg.concepts).map_err(st)?;
        let v = validate_graph(&kg);
        if !v.is_valid() {
            return Err(PipelineError::stage("kg", format!("graph for `{m}` is invalid: {:?}", v.violations)));
        }
        log::info!("graph `{m}`: {} concepts, {} edges ({report:?})", kg.concept_count(), kg.edges.len());
        out.insert(m.clone(), kg);
    }
    Ok(out)
}

/// Temporal test hold-out and a stratified `fraction` of the rest.
pub fn split(cfg: &PipelineConfig, data: &Dataset, fraction: f64) -> Result<Split, PipelineError> {
    let s = split_dataset_with(&data.sequence, fraction, derive_seed(cfg.seed, SEED_SPLIT), cfg.eval.test_fraction)
        .map_err(|e| PipelineError::stage("split", e))?;
    for w in &s.warnings {
        log::warn!("{w}");
    }
    Ok(s)
}

fn load_templates(cfg: &PipelineConfig) -> Result<TemplateSet, crate::textgen::TextgenError> {
    match &cfg.corpus.templates {
        Some(p) => TemplateSet::load(p),
        None => Ok(TemplateSet::default()),
    }
}

/// Paired descriptions for the training packets only.
pub fn build_training_corpus(
    cfg: &PipelineConfig,
    data: &Dataset,
    train: &LabeledSequence,
    kgs: &BTreeMap<String, KnowledgeGraph>,
) -> Result<(PairedCorpus, BuildReport), PipelineError> {
    let st = |e| PipelineError::stage("corpus", e);
    let templates = load_templates(cfg).map_err(st)?;
    build_corpus(
        &data.flows,
        kgs,
        train,
        &cfg.paraphrase,
        cfg.corpus.concepts_per_text,
        derive_seed(cfg.seed, SEED_CORPUS),
        &CorpusOptions {
            templates,
            window_s: cfg.corpus.window_s,
        },
    )
    .map_err(st)
}

pub fn pretrain(cfg: &PipelineConfig, corpus: &PairedCorpus, enc: &EncoderPair) -> Result<PretrainOutcome<f64>, PipelineError> {
    let mut c = cfg.contrastive.clone();
    c.seed = derive_seed(cfg.seed, SEED_CONTRASTIVE);
    pretrain_heads(corpus, enc, &c).map_err(|e| PipelineError::stage("pretrain", e))
}

fn mission_inputs(
    kgs: &BTreeMap<String, KnowledgeGraph>,
    heads: &SslHeads<f64>,
    enc: &EncoderPair,
    stage: &str,
) -> Result<Vec<MissionInputs<f64>>, PipelineError> {
    kgs.values()
        .map(|k| MissionInputs::new(k, heads, enc).map_err(|e| PipelineError::stage(stage, e)))
        .collect()
}

/// Trains the reasoner on `train` with frozen heads; missions in graph-map order.
pub fn train(
    cfg: &PipelineConfig,
    classes: &[String],
    train: &LabeledSequence,
    kgs: &BTreeMap<String, KnowledgeGraph>,
    heads: &SslHeads<f64>,
    enc: &EncoderPair,
) -> Result<TrainedReasoner<f64>, PipelineError> {
    let st = |e| PipelineError::stage("train", e);
    let inputs = mission_inputs(kgs, heads, enc, "train")?;
    let z = packet_embeddings(train, heads, enc).map_err(st)?;
    let labels = label_indices(train, classes).map_err(st)?;
    let mut rc = cfg.reasoner;
    rc.seed = derive_seed(cfg.seed, SEED_REASONER);
    let names: Vec<String> = kgs.keys().cloned().collect();
    let model = ReasonerModel::init(&rc, &names, classes, heads.embed_dim()).map_err(st)?;
    train_from(model, &inputs, &z, &labels).map_err(st)
}

/// `(label, prompt)` pairs, several per class: one per description template,
/// using the class's mission graph when it has one.
pub fn zero_shot_prompts(
    classes: &[String],
    kgs: &BTreeMap<String, KnowledgeGraph>,
    templates: &TemplateSet,
) -> Vec<(String, String)> {
    classes
        .iter()
        .flat_map(|c| template_prompts(c, templates, kgs.get(c)).into_iter().map(move |p| (c.clone(), p)))
        .collect()
}

/// Zero-shot top-k accuracy of `heads` on `seq` (k capped at the class count).
pub fn zero_shot_top_k(
    seq: &LabeledSequence,
    classes: &[String],
    kgs: &BTreeMap<String, KnowledgeGraph>,
    templates: &TemplateSet,
    heads: &SslHeads<f64>,
    enc: &EncoderPair,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, PipelineError> {
    let st = |e: String| PipelineError::stage("evaluate", e);
    let prompts = zero_shot_prompts(classes, kgs, templates);
    let clf = ZeroShotClassifier::new(heads, enc, &prompts).map_err(|e| st(e.to_string()))?;
    let z = packet_embeddings(seq, heads, enc).map_err(|e| st(e.to_string()))?;
    let rankings: Vec<Vec<String>> = z.rows().into_iter().map(|r| clf.rank_embedding(r)).collect();
    let truth: Vec<String> = seq.records.iter().map(|r| r.label.clone()).collect();
    let mut out = BTreeMap::new();
    for &k in ks {
        let acc = top_k_accuracy(&rankings, &truth, k.min(classes.len())).map_err(|e| st(e.to_string()))?;
        out.insert(k, acc);
    }
    Ok(out)
}

/// Streams the test split through the reasoner and scores it against the
/// probe and zero-shot baselines.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &PipelineConfig,
    classes: &[String],
    split: &Split,
    kgs: &BTreeMap<String, KnowledgeGraph>,
    heads: &SslHeads<f64>,
    enc: &EncoderPair,
    model: &ReasonerModel<f64>,
) -> Result<(EvalReport, Vec<ScoreRecord>), PipelineError> {
    let st = |e: String| PipelineError::stage("evaluate", e);
    let fp = cfg.fingerprint();
    let ks = &cfg.eval.top_k;
    let inputs = mission_inputs(kgs, heads, enc, "evaluate")?;
    let z_test = packet_embeddings(&split.test, heads, enc).map_err(|e| st(e.to_string()))?;
    let truth = label_indices(&split.test, classes).map_err(|e| st(e.to_string()))?;
    let probs = infer_stream(&z_test, &inputs, model).map_err(|e| st(e.to_string()))?;
    let reasoner = MetricReport::from_scores(&probs, &truth, classes, ks, &fp).map_err(|e| st(e.to_string()))?;

    let z_train = packet_embeddings(&split.train, heads, enc).map_err(|e| st(e.to_string()))?;
    let y_train = label_indices(&split.train, classes).map_err(|e| st(e.to_string()))?;
    let probe = LogisticProbe::fit(z_train.view(), &y_train, classes.len(), &cfg.eval.probe).map_err(|e| st(e.to_string()))?;
    let probe = MetricReport::from_scores(&probe.predict_proba(z_test.view()), &truth, classes, ks, &fp)
        .map_err(|e| st(e.to_string()))?;

    let templates = load_templates(cfg).map_err(|e| st(e.to_string()))?;
    let zero_shot = zero_shot_top_k(&split.test, classes, kgs, &templates, heads, enc, ks)?;
    let shapes: Vec<GraphShape> = inputs.iter().map(|i| GraphShape::from(&i.graph)).collect();
    let packet_head = heads.packet.as_ref().map(|h| (h.input_dim(), h.embed_dim()));
    let cost = count_flops(model, &shapes, packet_head, heads.param_count() as u64);

    let scores = ScoreRecord::build(&split.test, &probs, classes);
    let report = EvalReport {
        fingerprint: fp,
        classes: classes.to_vec(),
        missions: kgs.keys().cloned().collect(),
        train_size: split.train.len(),
        test_size: split.test.len(),
        reasoner,
        probe,
        zero_shot,
        cost,
    };
    Ok((report, scores))
}

/// Reasoner scores for every packet of `seq`, streamed from an empty window.
pub fn score_sequence(
    classes: &[String],
    seq: &LabeledSequence,
    kgs: &BTreeMap<String, KnowledgeGraph>,
    heads: &SslHeads<f64>,
    enc: &EncoderPair,
    model: &ReasonerModel<f64>,
) -> Result<Vec<ScoreRecord>, PipelineError> {
    let st = |e: String| PipelineError::stage("infer", e);
    let inputs = mission_inputs(kgs, heads, enc, "infer")?;
    let z = packet_embeddings(seq, heads, enc).map_err(|e| st(e.to_string()))?;
    let probs = infer_stream(&z, &inputs, model).map_err(|e| st(e.to_string()))?;
    Ok(ScoreRecord::build(seq, &probs, classes))
}

/// Parameter and FLOP counts of the configured reasoner, from its graphs
/// and an untrained model; nothing is trained.
pub fn cost_estimate(cfg: &PipelineConfig) -> Result<CostReport, PipelineError> {
    cfg.validate()?;
    let st = |e: String| PipelineError::stage("cost", e);
    let enc = cfg.encoders.build()?;
    let data = ingest(cfg)?;
    let kgs = build_graphs(cfg, &missions(&data.classes))?;
    let c = &cfg.contrastive;
    let heads = SslHeads::<f64>::for_encoders(c.ssl_mode, &enc, c.embed_dim, 0).map_err(|e| st(e.to_string()))?;
    let inputs = mission_inputs(&kgs, &heads, &enc, "cost")?;
    let names: Vec<String> = kgs.keys().cloned().collect();
    let model = ReasonerModel::<f64>::init(&cfg.reasoner, &names, &data.classes, heads.embed_dim()).map_err(|e| st(e.to_string()))?;
    let shapes: Vec<GraphShape> = inputs.iter().map(|i| GraphShape::from(&i.graph)).collect();
    let packet_head = heads.packet.as_ref().map(|h| (h.input_dim(), h.embed_dim()));
    Ok(count_flops(&model, &shapes, packet_head, heads.param_count() as u64))
}

fn fit_and_evaluate(
    cfg: &PipelineConfig,
    data: &Dataset,
    kgs: &BTreeMap<String, KnowledgeGraph>,
    split: &Split,
    enc: &EncoderPair,
) -> Result<EvalReport, PipelineError> {
    let (corpus, _) = build_training_corpus(cfg, data, &split.train, kgs)?;
    let heads = pretrain(cfg, &corpus, enc)?.heads;
    let trained = train(cfg, &data.classes, &split.train, kgs, &heads, enc)?;
    Ok(evaluate(cfg, &data.classes, split, kgs, &heads, enc, &trained.model)?.0)
}

/// Every stage without touching the output directory.
pub fn run_in_memory(cfg: &PipelineConfig, fraction: f64) -> Result<EvalReport, PipelineError> {
    cfg.validate()?;
    let enc = cfg.encoders.build()?;
    let data = ingest(cfg)?;
    let kgs = build_graphs(cfg, &missions(&data.classes))?;
    let split = split(cfg, &data, fraction)?;
    fit_and_evaluate(cfg, &data, &kgs, &split, &enc)
}

/// Retrains everything downstream of the graphs at each configured fraction
/// of the training data; the test hold-out is shared.
pub fn sweep(cfg: &PipelineConfig) -> Result<Vec<SweepPoint>, PipelineError> {
    cfg.validate()?;
    let enc = cfg.encoders.build()?;
    let data = ingest(cfg)?;
    let kgs = build_graphs(cfg, &missions(&data.classes))?;
    scarcity_sweep(
        &data.sequence,
        &cfg.eval.sweep_fractions,
        derive_seed(cfg.seed, SEED_SPLIT),
        cfg.eval.test_fraction,
        |s| fit_and_evaluate(cfg, &data, &kgs, s, &enc).map(|r| r.reasoner),
    )
    .map_err(|e| PipelineError::stage("sweep", e))
}
