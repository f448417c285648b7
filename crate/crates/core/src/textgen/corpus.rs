use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    inject_concepts, paraphrase_all, render_template, ParaphraseProvider, Provenance, TemplateSet, TemplateText,
    TextSample, TextgenError,
};
use crate::derive_seed;
use crate::ingest::{FlowIndex, FlowRecord, LabeledSequence, PacketRecord, BENIGN};
use crate::kg::KnowledgeGraph;

/// One aligned text/packet pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPair {
    pub text: String,
    #[serde(rename = "packet_hex", with = "crate::ingest::hex_bytes")]
    pub payload: Vec<u8>,
    pub label: String,
    pub ts: u64,
    pub provenance: Provenance,
}

/// Text samples aligned index-for-index with packet payloads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedCorpus {
    pub pairs: Vec<CorpusPair>,
}

impl PairedCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.text.as_str())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), TextgenError> {
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n").map_err(|source| TextgenError::Io {
                path: "<corpus>".into(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TextgenError> {
        let mut pairs = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|source| TextgenError::Io {
                path: "<corpus>".into(),
                source,
            })?;
            if !line.trim().is_empty() {
                pairs.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { pairs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextgenError> {
        let path = path.as_ref();
        let io = |source| TextgenError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextgenError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| TextgenError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub pairs: usize,
    /// Packets described by a flow-table row.
    pub matched: usize,
    /// Packets with no flow row, described from the packet alone.
    pub pseudo_flows: usize,
    /// Paraphrase failures; each such sample keeps its template text.
    pub provider_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOptions {
    pub templates: TemplateSet,
    /// Slack after a flow's end when matching packets to rows, seconds.
    pub window_s: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            templates: TemplateSet::default(),
            window_s: 1.0,
        }
    }
}

fn pseudo_flow(p: &PacketRecord) -> FlowRecord {
    FlowRecord {
        src_addr: "unknown".into(),
        dst_addr: "unknown".into(),
        src_port: 0,
        dst_port: 0,
        protocol: "unknown".into(),
        start_us: p.timestamp_us,
        duration: 0.0,
        packet_count: 1,
        byte_count: p.payload.len() as u64,
        rates: Default::default(),
        label: p.label.clone(),
        aux: Default::default(),
    }
}

/// Describes every packet with text rendered from its flow row (render,
/// inject `k` concepts from the label's graph, paraphrase). Benign packets
/// skip concept injection.
pub fn build_corpus(
    flows: &[FlowRecord],
    kgs: &BTreeMap<String, KnowledgeGraph>,
    packets: &LabeledSequence,
    provider: &ParaphraseProvider,
    k: usize,
    seed: u64,
    opts: &CorpusOptions,
) -> Result<(PairedCorpus, BuildReport), TextgenError> {
    let index = FlowIndex::new(flows, opts.window_s.max(f64::MIN_POSITIVE));
    let mut report = BuildReport::default();
    let mut rendered: Vec<TemplateText> = Vec::with_capacity(packets.len());
    for (i, p) in packets.records.iter().enumerate() {
        let kg = if p.label == BENIGN {
            None
        } else {
            Some(kgs.get(&p.label).ok_or_else(|| TextgenError::MissingGraph(p.label.clone()))?)
        };
        let flow = match index.lookup(p.flow_key, p.timestamp_us) {
            Some(f) => {
                report.matched += 1;
                let mut f = f.clone();
                f.label.clone_from(&p.label);
                f
            }
            None => {
                report.pseudo_flows += 1;
                pseudo_flow(p)
            }
        };
        let s = derive_seed(seed, i as u64);
        let mut t = render_template(&flow, &opts.templates, s)?;
        if let Some(kg) = kg {
            t = inject_concepts(t, kg, k, derive_seed(s, 1));
        }
        rendered.push(t);
    }

    let samples = paraphrase_all(&rendered, provider);
    let mut pairs = Vec::with_capacity(samples.len());
    for ((p, t), r) in packets.records.iter().zip(&rendered).zip(samples) {
        let sample = r.unwrap_or_else(|e| {
            log::warn!("{e}; keeping template text");
            report.provider_errors += 1;
            TextSample::from_template(t)
        });
        pairs.push(CorpusPair {
            text: sample.text,
            payload: p.payload.clone(),
            label: p.label.clone(),
            ts: p.timestamp_us,
            provenance: sample.provenance,
        });
    }
    report.pairs = pairs.len();
    Ok((PairedCorpus { pairs }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::tokenize;
    use crate::ingest::synth_dataset;
    use crate::kg::{generate_mission_graph, ConceptProvider, KgParams};
    use std::collections::BTreeSet;

    fn graphs(labels: &[String]) -> BTreeMap<String, KnowledgeGraph> {
        labels
            .iter()
            .filter(|l| l.as_str() != BENIGN)
            .map(|l| {
                let kg = generate_mission_graph(l, &KgParams::default(), &ConceptProvider::Stub { seed: 1 })
                    .unwrap()
                    .0;
                (l.clone(), kg)
            })
            .collect()
    }

    #[test]
    fn empty_and_cardinality() {
        let d = synth_dataset(4, 10, 3).unwrap();
        let kgs = graphs(&d.sequence.class_set);
        let stub = ParaphraseProvider::Stub { seed: 0 };
        let empty = LabeledSequence::new(vec![]);
        let (c, _) = build_corpus(&d.flows, &kgs, &empty, &stub, 2, 0, &CorpusOptions::default()).unwrap();
        assert!(c.is_empty());
        let ten = LabeledSequence::new(d.sequence.records[..10].to_vec());
        let (c, r) = build_corpus(&d.flows, &kgs, &ten, &stub, 2, 0, &CorpusOptions::default()).unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(r.matched, 10);
        for (pair, pkt) in c.pairs.iter().zip(&ten.records) {
            assert_eq!(pair.payload, pkt.payload);
            assert_eq!(pair.label, pkt.label);
        }
    }

    #[test]
    fn label_multiset_preserved_and_jsonl_round_trip() {
        let d = synth_dataset(4, 30, 8).unwrap();
        let kgs = graphs(&d.sequence.class_set);
        let (c, _) = build_corpus(
            &d.flows,
            &kgs,
            &d.sequence,
            &ParaphraseProvider::Stub { seed: 2 },
            3,
            5,
            &CorpusOptions::default(),
        )
        .unwrap();
        let mut a: Vec<&str> = c.pairs.iter().map(|p| p.label.as_str()).collect();
        let mut b = d.sequence.labels();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let line: serde_json::Value = serde_json::from_slice(buf.split(|b| *b == b'\n').next().unwrap()).unwrap();
        for key in ["text", "packet_hex", "label", "ts", "provenance"] {
            assert!(line.get(key).is_some(), "{key}");
        }
        assert_eq!(PairedCorpus::read_jsonl(&buf[..]).unwrap(), c);
    }

    #[test]
    fn missing_graph_is_error() {
        let d = synth_dataset(4, 5, 3).unwrap();
        let r = build_corpus(
            &d.flows,
            &BTreeMap::new(),
            &d.sequence,
            &ParaphraseProvider::None,
            1,
            0,
            &CorpusOptions::default(),
        );
        assert!(matches!(r, Err(TextgenError::MissingGraph(_))));
    }

    #[test]
    fn concept_injection_grows_vocabulary() {
        let d = synth_dataset(4, 40, 11).unwrap();
        let kgs = graphs(&d.sequence.class_set);
        let vocab = |k| {
            let (c, _) = build_corpus(
                &d.flows,
                &kgs,
                &d.sequence,
                &ParaphraseProvider::None,
                k,
                1,
                &CorpusOptions::default(),
            )
            .unwrap();
            c.texts().flat_map(tokenize).collect::<BTreeSet<_>>().len()
        };
        assert!(vocab(3) >= vocab(0));
    }

    #[test]
    fn unmatched_packets_get_pseudo_flows() {
        let d = synth_dataset(4, 5, 3).unwrap();
        let kgs = graphs(&d.sequence.class_set);
        let (c, r) = build_corpus(
            &[],
            &kgs,
            &d.sequence,
            &ParaphraseProvider::None,
            0,
            0,
            &CorpusOptions::default(),
        )
        .unwrap();
        assert_eq!(r.pseudo_flows, d.sequence.len());
        assert!(c.pairs.iter().all(|p| p.provenance == Provenance::Template));
    }
}
