use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::graph::{KnowledgeGraph, NodeLevel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateNodeId { id: String },
    UnknownNode { edge: (String, String), id: String },
    /// Nodes left over after topological elimination; they lie on or behind a cycle.
    Cycle { nodes: Vec<String> },
    SensorHasIncoming { edge: (String, String) },
    EmbeddingHasOutgoing { edge: (String, String) },
    IllegalEdge { edge: (String, String) },
    EmptyLayer { layer: usize },
    LayerIndexGap { expected: usize, found: usize },
    DuplicateConcept { layer: usize, concept: String },
    LayerOverlap { concept: String, layers: (usize, usize) },
    MultiWordConcept { id: String, concept: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of a mission graph.
pub fn validate_graph(kg: &KnowledgeGraph) -> ValidationReport {
    let mut v = Vec::new();
    let nodes = kg.nodes();
    let mut level: HashMap<&str, NodeLevel> = HashMap::new();
    for n in &nodes {
        if level.insert(n.id.as_str(), n.level).is_some() {
            v.push(Violation::DuplicateNodeId { id: n.id.clone() });
        }
    }

    for (expected, layer) in (1..).zip(&kg.layers) {
        if layer.index != expected {
            v.push(Violation::LayerIndexGap { expected, found: layer.index });
        }
        if layer.concepts.is_empty() {
            v.push(Violation::EmptyLayer { layer: layer.index });
        }
        let mut seen = BTreeSet::new();
        for (i, c) in layer.concepts.iter().enumerate() {
            if !seen.insert(c) {
                v.push(Violation::DuplicateConcept { layer: layer.index, concept: c.clone() });
            }
            if c.is_empty() || c.chars().any(char::is_whitespace) {
                v.push(Violation::MultiWordConcept {
                    id: super::graph::concept_id(&kg.mission, layer.index, i),
                    concept: c.clone(),
                });
            }
        }
    }
    let mut first_layer: BTreeMap<&str, usize> = BTreeMap::new();
    for layer in &kg.layers {
        for c in layer.concepts.iter().collect::<BTreeSet<_>>() {
            match first_layer.get(c.as_str()) {
                Some(&earlier) => v.push(Violation::LayerOverlap {
                    concept: c.clone(),
                    layers: (earlier, layer.index),
                }),
                None => {
                    first_layer.insert(c, layer.index);
                }
            }
        }
    }

    let deepest = kg.layers.last().map(|l| l.index);
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut indeg: HashMap<&str, usize> = level.keys().map(|k| (*k, 0)).collect();
    for (a, b) in &kg.edges {
        let edge = (a.clone(), b.clone());
        let (la, lb) = match (level.get(a.as_str()), level.get(b.as_str())) {
            (Some(la), Some(lb)) => (*la, *lb),
            (None, _) => {
                v.push(Violation::UnknownNode { edge, id: a.clone() });
                continue;
            }
            (_, None) => {
                v.push(Violation::UnknownNode { edge, id: b.clone() });
                continue;
            }
        };
        adj.entry(a.as_str()).or_default().push(b.as_str());
        *indeg.get_mut(b.as_str()).expect("known node") += 1;
        if lb == NodeLevel::Sensor {
            v.push(Violation::SensorHasIncoming { edge: edge.clone() });
        }
        if la == NodeLevel::Embedding {
            v.push(Violation::EmbeddingHasOutgoing { edge: edge.clone() });
        }
        let allowed = match (la, lb) {
            (NodeLevel::Sensor, NodeLevel::Layer(1)) => true,
            (NodeLevel::Layer(h), NodeLevel::Layer(k)) => k == h + 1,
            (NodeLevel::Layer(h), NodeLevel::Embedding) => Some(h) == deepest,
            _ => false,
        };
        if !allowed {
            v.push(Violation::IllegalEdge { edge });
        }
    }

    // Kahn elimination
    let mut queue: VecDeque<&str> = nodes
        .iter()
        .map(|n| n.id.as_str())
        .filter(|id| indeg[id] == 0)
        .collect();
    let mut removed = 0;
    while let Some(n) = queue.pop_front() {
        removed += 1;
        for &m in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indeg.get_mut(m).expect("known node");
            *d -= 1;
            if *d == 0 {
                queue.push_back(m);
            }
        }
    }
    if removed < indeg.len() {
        let mut stuck: Vec<String> = indeg
            .iter()
            .filter(|(_, d)| **d > 0)
            .map(|(k, _)| k.to_string())
            .collect();
        stuck.sort();
        v.push(Violation::Cycle { nodes: stuck });
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{generate_mission_graph, ConceptProvider, KgParams};

    fn stub_graph() -> KnowledgeGraph {
        generate_mission_graph("dos", &KgParams::default(), &ConceptProvider::Stub { seed: 2 })
            .unwrap()
            .0
    }

    #[test]
    fn assembled_graph_is_clean() {
        let r = validate_graph(&stub_graph());
        assert!(r.is_valid(), "{:?}", r.violations);
    }

    #[test]
    fn back_edge_reports_cycle() {
        let mut kg = stub_graph();
        kg.edges.push(("dos/L2/0".into(), "dos/L1/0".into()));
        let r = validate_graph(&kg);
        assert!(r.violations.iter().any(|x| matches!(x, Violation::Cycle { nodes } if nodes.contains(&"dos/L1/0".to_string()))));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::IllegalEdge { .. })));
    }

    #[test]
    fn duplicated_concept_across_layers() {
        let mut kg = stub_graph();
        let c = kg.layers[0].concepts[0].clone();
        kg.layers[1].concepts[0] = c.clone();
        let r = validate_graph(&kg);
        assert!(r.violations.contains(&Violation::LayerOverlap { concept: c, layers: (1, 2) }));
    }

    #[test]
    fn sensor_and_embedding_direction() {
        let mut kg = stub_graph();
        kg.edges.push(("dos/embedding".into(), "dos/sensor".into()));
        let r = validate_graph(&kg);
        assert!(r.violations.iter().any(|x| matches!(x, Violation::SensorHasIncoming { .. })));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::EmbeddingHasOutgoing { .. })));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::Cycle { .. })));
    }

    #[test]
    fn unknown_node_and_multiword() {
        let mut kg = stub_graph();
        kg.edges.push(("dos/sensor".into(), "dos/L9/9".into()));
        kg.layers[0].concepts[1] = "two words".into();
        let r = validate_graph(&kg);
        assert!(r.violations.iter().any(|x| matches!(x, Violation::UnknownNode { id, .. } if id == "dos/L9/9")));
        assert!(r.violations.iter().any(|x| matches!(x, Violation::MultiWordConcept { .. })));
    }
}
