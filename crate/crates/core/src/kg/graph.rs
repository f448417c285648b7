use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::provider::ConceptSource;
use super::KgError;
use crate::provider::ProviderError;

/// One level of the concept hierarchy (1 = key concepts).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptLayer {
    pub index: usize,
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeLevel {
    Sensor,
    Layer(usize),
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub text: String,
    pub level: NodeLevel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub mission: String,
    pub sensor: String,
    pub embedding: String,
    pub layers: Vec<ConceptLayer>,
    pub edges: Vec<(String, String)>,
}

pub(crate) fn sensor_id(mission: &str) -> String {
    format!("{mission}/sensor")
}

pub(crate) fn embedding_id(mission: &str) -> String {
    format!("{mission}/embedding")
}

pub(crate) fn concept_id(mission: &str, layer: usize, index: usize) -> String {
    format!("{mission}/L{layer}/{index}")
}

impl KnowledgeGraph {
    /// Sensor first, then concept layers in order, then the embedding node.
    pub fn nodes(&self) -> Vec<Node> {
        let mut nodes = vec![Node {
            id: self.sensor.clone(),
            text: "sensor".into(),
            level: NodeLevel::Sensor,
        }];
        for layer in &self.layers {
            for (i, c) in layer.concepts.iter().enumerate() {
                nodes.push(Node {
                    id: concept_id(&self.mission, layer.index, i),
                    text: c.clone(),
                    level: NodeLevel::Layer(layer.index),
                });
            }
        }
        nodes.push(Node {
            id: self.embedding.clone(),
            text: self.mission.replace('_', " "),
            level: NodeLevel::Embedding,
        });
        nodes
    }

    pub fn concept_count(&self) -> usize {
        self.layers.iter().map(|l| l.concepts.len()).sum()
    }

    /// Every concept, layer by layer.
    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().flat_map(|l| l.concepts.iter().map(String::as_str))
    }

    /// Hierarchy index: sensor 0, layer h at h, embedding one past the deepest layer.
    pub fn hierarchy(&self, level: NodeLevel) -> usize {
        match level {
            NodeLevel::Sensor => 0,
            NodeLevel::Layer(h) => h,
            NodeLevel::Embedding => self.layers.len() + 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = KgDocument {
            mission: self.mission.clone(),
            nodes: self
                .nodes()
                .into_iter()
                .map(|n| NodeDocument {
                    id: n.id,
                    text: n.text,
                    layer: match n.level {
                        NodeLevel::Sensor => LayerTag::Index(0),
                        NodeLevel::Layer(h) => LayerTag::Index(h),
                        NodeLevel::Embedding => LayerTag::Name("embedding".into()),
                    },
                })
                .collect(),
            edges: self.edges.iter().map(|(a, b)| [a.clone(), b.clone()]).collect(),
        };
        serde_json::to_value(doc).expect("graph document serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, KgError> {
        let doc: KgDocument = serde_json::from_value(value.clone())?;
        let mut sensor = None;
        let mut embedding = None;
        let mut layers: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for n in doc.nodes {
            match n.layer {
                LayerTag::Index(0) => sensor = Some(n.id),
                LayerTag::Index(h) => layers.entry(h).or_default().push(n.text),
                LayerTag::Name(s) if s == "embedding" => embedding = Some(n.id),
                LayerTag::Name(s) => return Err(KgError::Format(format!("unknown layer tag `{s}`"))),
            }
        }
        Ok(Self {
            sensor: sensor.ok_or_else(|| KgError::Format("no sensor node (layer 0)".into()))?,
            embedding: embedding.ok_or_else(|| KgError::Format("no embedding node".into()))?,
            mission: doc.mission,
            layers: layers
                .into_iter()
                .map(|(index, concepts)| ConceptLayer { index, concepts })
                .collect(),
            edges: doc.edges.into_iter().map(|[a, b]| (a, b)).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KgError> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, s).map_err(|source| KgError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KgError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| KgError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&serde_json::from_str(&s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct KgDocument {
    mission: String,
    nodes: Vec<NodeDocument>,
    edges: Vec<[String; 2]>,
}

#[derive(Serialize, Deserialize)]
struct NodeDocument {
    id: String,
    text: String,
    layer: LayerTag,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LayerTag {
    Index(usize),
    Name(String),
}

/// Lowercase, ASCII-folded, trimmed of surrounding punctuation.
pub fn normalize_concept(raw: &str) -> String {
    deunicode::deunicode(raw)
        .to_ascii_lowercase()
        .trim()
        .trim_matches(|c: char| !c.is_ascii_alphanumeric())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn hyphenate(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join("-")
}

/// Key concept layer with exactly `v` distinct single-word concepts.
pub fn generate_key_concepts(
    mission: &str,
    v: usize,
    source: &dyn ConceptSource,
    retries: usize,
) -> Result<ConceptLayer, KgError> {
    if v == 0 {
        return Err(KgError::InvalidArgument("V must be at least 1".into()));
    }
    let mut words: Vec<String> = Vec::new();
    let mut multi: Vec<String> = Vec::new();
    let mut last_err: Option<ProviderError> = None;
    for attempt in 0..=retries {
        let raw = match source.key_concepts(mission, v, attempt) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("key concept query {attempt} for `{mission}` failed: {e}");
                last_err = Some(e);
                continue;
            }
        };
        for w in raw {
            let n = normalize_concept(&w);
            if n.is_empty() {
                continue;
            }
            if n.contains(' ') {
                if !multi.contains(&n) {
                    multi.push(n);
                }
            } else if !words.contains(&n) {
                words.push(n);
            }
            if words.len() == v {
                return Ok(ConceptLayer { index: 1, concepts: words });
            }
        }
    }
    for m in multi {
        let h = hyphenate(&m);
        if !words.contains(&h) {
            words.push(h);
        }
        if words.len() == v {
            return Ok(ConceptLayer { index: 1, concepts: words });
        }
    }
    Err(KgError::Provider(ProviderError::Exhausted {
        attempts: retries + 1,
        reason: match last_err {
            Some(e) => e.to_string(),
            None => format!("only {} distinct concepts for `{mission}`, wanted {v}", words.len()),
        },
    }))
}

/// Source-to-target associations recorded between consecutive layers.
pub type LayerLinks = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExpansionReport {
    /// Layer index whose expansion came back empty, when expansion stopped early.
    pub stopped_at: Option<usize>,
    pub removed_overlaps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub layers: Vec<ConceptLayer>,
    /// `links[i]` connects `layers[i]` to `layers[i + 1]`.
    pub links: Vec<LayerLinks>,
    pub report: ExpansionReport,
}

/// Grows the hierarchy to `n` layers; each new layer holds the associations of
/// the previous one minus every word already present in an earlier layer.
pub fn expand_concepts(
    layers: Vec<ConceptLayer>,
    source: &dyn ConceptSource,
    n: usize,
    max_layer_size: usize,
) -> Result<Expansion, KgError> {
    if layers.is_empty() {
        return Err(KgError::InvalidArgument("expansion needs the key concept layer".into()));
    }
    if n == 0 {
        return Err(KgError::InvalidArgument("N must be at least 1".into()));
    }
    let mut layers = layers;
    let mut links: Vec<LayerLinks> = Vec::new();
    let mut report = ExpansionReport::default();
    let mut seen: BTreeSet<String> = layers.iter().flat_map(|l| l.concepts.iter().cloned()).collect();
    while layers.len() < n {
        let prev = layers.last().expect("non-empty");
        let next_index = prev.index + 1;
        let assoc = source.associated(&prev.concepts, 0)?;
        let mut words: Vec<String> = Vec::new();
        let mut layer_links: LayerLinks = Vec::new();
        for (src, w) in assoc {
            let w = hyphenate(&normalize_concept(&w));
            if w.is_empty() {
                continue;
            }
            if seen.contains(&w) {
                report.removed_overlaps += 1;
                continue;
            }
            let j = match words.iter().position(|x| x == &w) {
                Some(j) => j,
                None if words.len() < max_layer_size => {
                    words.push(w);
                    words.len() - 1
                }
                None => continue,
            };
            match src {
                Some(i) if i < prev.concepts.len() => layer_links.push((i, j)),
                _ => layer_links.extend((0..prev.concepts.len()).map(|i| (i, j))),
            }
        }
        if words.is_empty() {
            log::warn!("expansion of layer {} produced no new concepts; stopping", prev.index);
            report.stopped_at = Some(next_index);
            break;
        }
        layer_links.sort_unstable();
        layer_links.dedup();
        seen.extend(words.iter().cloned());
        links.push(layer_links);
        layers.push(ConceptLayer {
            index: next_index,
            concepts: words,
        });
    }
    Ok(Expansion { layers, links, report })
}

/// How consecutive concept layers are wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// Every concept in layer h points at every concept in layer h+1.
    #[default]
    CompleteBipartite,
    /// Only the source-attributed associations reported during expansion.
    Reported,
}

pub fn assemble_graph(mission: &str, layers: Vec<ConceptLayer>) -> Result<KnowledgeGraph, KgError> {
    assemble_graph_with(mission, layers, None)
}

/// Builds the DAG. `links` (when given) restricts inter-layer edges to the
/// listed index pairs.
pub fn assemble_graph_with(
    mission: &str,
    layers: Vec<ConceptLayer>,
    links: Option<&[LayerLinks]>,
) -> Result<KnowledgeGraph, KgError> {
    if layers.is_empty() {
        return Err(KgError::InvalidArgument("a graph needs at least one concept layer".into()));
    }
    let sensor = sensor_id(mission);
    let embedding = embedding_id(mission);
    let mut edges = Vec::new();
    for i in 0..layers[0].concepts.len() {
        edges.push((sensor.clone(), concept_id(mission, layers[0].index, i)));
    }
    for (h, pair) in layers.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        match links.and_then(|l| l.get(h)) {
            Some(l) => {
                for &(i, j) in l {
                    edges.push((concept_id(mission, a.index, i), concept_id(mission, b.index, j)));
                }
            }
            None => {
                for i in 0..a.concepts.len() {
                    for j in 0..b.concepts.len() {
                        edges.push((concept_id(mission, a.index, i), concept_id(mission, b.index, j)));
                    }
                }
            }
        }
    }
    let last = layers.last().expect("non-empty");
    for i in 0..last.concepts.len() {
        edges.push((concept_id(mission, last.index, i), embedding.clone()));
    }
    Ok(KnowledgeGraph {
        mission: mission.to_string(),
        sensor,
        embedding,
        layers,
        edges,
    })
}

/// Knobs for building one mission graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgParams {
    /// Key concepts requested.
    pub v: usize,
    /// Concept layers, key concepts included.
    pub n: usize,
    pub retries: usize,
    pub max_layer_size: usize,
    pub connectivity: Connectivity,
}

impl Default for KgParams {
    fn default() -> Self {
        Self {
            v: 10,
            n: 2,
            retries: 3,
            max_layer_size: 10,
            connectivity: Connectivity::CompleteBipartite,
        }
    }
}

/// Key concepts, expansion, and assembly in one call.
pub fn generate_mission_graph(
    mission: &str,
    params: &KgParams,
    source: &dyn ConceptSource,
) -> Result<(KnowledgeGraph, ExpansionReport), KgError> {
    let key = generate_key_concepts(mission, params.v, source, params.retries)?;
    let exp = expand_concepts(vec![key], source, params.n, params.max_layer_size)?;
    let links = match params.connectivity {
        Connectivity::CompleteBipartite => None,
        Connectivity::Reported => Some(exp.links.as_slice()),
    };
    let kg = assemble_graph_with(mission, exp.layers.clone(), links)?;
    Ok((kg, exp.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::ConceptProvider;

    struct Scripted {
        key: Vec<Vec<&'static str>>,
        echo: bool,
    }

    impl ConceptSource for Scripted {
        fn key_concepts(&self, _: &str, _: usize, attempt: usize) -> Result<Vec<String>, ProviderError> {
            Ok(self
                .key
                .get(attempt)
                .cloned()
                .unwrap_or_default()
                .into_iter()
                .map(String::from)
                .collect())
        }
        fn associated(&self, words: &[String], _: usize) -> Result<Vec<(Option<usize>, String)>, ProviderError> {
            if self.echo {
                Ok(words.iter().map(|w| (None, w.clone())).collect())
            } else {
                Ok(words.iter().enumerate().map(|(i, w)| (Some(i), format!("{w}x"))).collect())
            }
        }
    }

    #[test]
    fn stub_key_concepts_deterministic() {
        let p = ConceptProvider::Stub { seed: 1 };
        let a = generate_key_concepts("dos", 5, &p, 3).unwrap();
        let b = generate_key_concepts("dos", 5, &p, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.concepts.len(), 5);
        assert_eq!(generate_key_concepts("dos", 1, &p, 3).unwrap().concepts.len(), 1);
    }

    #[test]
    fn duplicates_are_padded_by_requery() {
        let s = Scripted {
            key: vec![vec!["Flood", "flood", "FLOOD"], vec!["flood", "botnet"], vec!["spike"]],
            echo: false,
        };
        let l = generate_key_concepts("dos", 3, &s, 3).unwrap();
        assert_eq!(l.concepts, vec!["flood", "botnet", "spike"]);
    }

    #[test]
    fn multi_word_rejected_then_hyphenated() {
        let s = Scripted {
            key: vec![vec!["port scanning", "probe"], vec!["port scanning"]],
            echo: false,
        };
        let l = generate_key_concepts("recon", 2, &s, 2).unwrap();
        assert_eq!(l.concepts, vec!["probe", "port-scanning"]);
        let short = Scripted { key: vec![vec!["a"]], echo: false };
        assert!(matches!(
            generate_key_concepts("x", 3, &short, 1),
            Err(KgError::Provider(ProviderError::Exhausted { attempts: 2, .. }))
        ));
    }

    #[test]
    fn normalization_folds_case_and_accents() {
        assert_eq!(normalize_concept("  Café! "), "cafe");
        assert_eq!(normalize_concept("Denial  of Service"), "denial of service");
    }

    #[test]
    fn expansion_identity_and_echo_stop() {
        let key = ConceptLayer { index: 1, concepts: vec!["a".into(), "b".into()] };
        let s = Scripted { key: vec![], echo: true };
        let e = expand_concepts(vec![key.clone()], &s, 1, 10).unwrap();
        assert_eq!(e.layers, vec![key.clone()]);
        let e = expand_concepts(vec![key], &s, 3, 10).unwrap();
        assert_eq!(e.layers.len(), 1);
        assert_eq!(e.report.stopped_at, Some(2));
    }

    #[test]
    fn edge_counts() {
        let kg = assemble_graph("m", vec![ConceptLayer { index: 1, concepts: vec!["a".into(), "b".into(), "c".into()] }]).unwrap();
        assert_eq!(kg.edges.len(), 6);
        let kg = assemble_graph(
            "m",
            vec![
                ConceptLayer { index: 1, concepts: vec!["a".into(), "b".into()] },
                ConceptLayer { index: 2, concepts: vec!["c".into(), "d".into(), "e".into()] },
            ],
        )
        .unwrap();
        assert_eq!(kg.edges.len(), 11);
    }

    #[test]
    fn reported_links_restrict_edges() {
        let s = Scripted { key: vec![vec!["a", "b"]], echo: false };
        let params = KgParams { v: 2, n: 2, connectivity: Connectivity::Reported, ..KgParams::default() };
        let (kg, _) = generate_mission_graph("m", &params, &s).unwrap();
        // 2 sensor edges + 2 attributed links + 2 embedding edges
        assert_eq!(kg.edges.len(), 6);
        assert!(kg.edges.contains(&("m/L1/0".into(), "m/L2/0".into())));
        assert!(!kg.edges.contains(&("m/L1/0".into(), "m/L2/1".into())));
    }

    #[test]
    fn json_round_trip() {
        let p = ConceptProvider::Stub { seed: 3 };
        let (kg, _) = generate_mission_graph("brute_force", &KgParams::default(), &p).unwrap();
        let json = kg.to_json();
        assert_eq!(json["nodes"][0]["layer"], 0);
        assert_eq!(json["nodes"].as_array().unwrap().last().unwrap()["layer"], "embedding");
        assert_eq!(KnowledgeGraph::from_json(&json).unwrap(), kg);
    }
}
