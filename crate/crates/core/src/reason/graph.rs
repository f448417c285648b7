use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use super::ReasonError;
use crate::kg::KnowledgeGraph;
use crate::Scalar;

/// Dense node numbering of a DAG with hierarchy levels and the
/// previous-level predecessors used by message passing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphIndex {
    pub ids: Arc<[String]>,
    /// Node text (concept word, mission name, or "sensor").
    pub texts: Vec<String>,
    pub hierarchy: Arc<[usize]>,
    /// In-neighbours one hierarchy level below each node.
    pub preds: Arc<Vec<Vec<usize>>>,
    pub sensor: usize,
    pub embedding: usize,
}

impl GraphIndex {
    pub fn from_kg(kg: &KnowledgeGraph) -> Result<Self, ReasonError> {
        let nodes = kg.nodes();
        let pos: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let hierarchy: Vec<usize> = nodes.iter().map(|n| kg.hierarchy(n.level)).collect();
        let mut preds = vec![Vec::new(); nodes.len()];
        for (a, b) in &kg.edges {
            let (Some(&u), Some(&v)) = (pos.get(a.as_str()), pos.get(b.as_str())) else {
                return Err(ReasonError::Graph(format!("edge {a} -> {b} names an unknown node")));
            };
            if hierarchy[u] + 1 == hierarchy[v] {
                preds[v].push(u);
            }
        }
        let find = |id: &str| {
            pos.get(id)
                .copied()
                .ok_or_else(|| ReasonError::Graph(format!("node {id} missing from `{}`", kg.mission)))
        };
        Ok(Self {
            sensor: find(&kg.sensor)?,
            embedding: find(&kg.embedding)?,
            ids: nodes.iter().map(|n| n.id.clone()).collect(),
            texts: nodes.into_iter().map(|n| n.text).collect(),
            hierarchy: hierarchy.into(),
            preds: Arc::new(preds),
        })
    }

    /// Arbitrary DAG on nodes `0..n`; the hierarchy of a node is the length
    /// of the longest path reaching it from a source.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], sensor: usize, embedding: usize) -> Result<Self, ReasonError> {
        if sensor >= n || embedding >= n {
            return Err(ReasonError::Graph(format!("sensor/embedding index outside 0..{n}")));
        }
        let mut out = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(ReasonError::Graph(format!("edge {u} -> {v} outside 0..{n}")));
            }
            out[u].push(v);
            indeg[v] += 1;
        }
        let mut depth = vec![0usize; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(u) = queue.pop_front() {
            seen += 1;
            for &v in &out[u] {
                depth[v] = depth[v].max(depth[u] + 1);
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if seen != n {
            return Err(ReasonError::Graph("edges contain a cycle".into()));
        }
        let mut preds = vec![Vec::new(); n];
        for &(u, v) in edges {
            if depth[u] + 1 == depth[v] {
                preds[v].push(u);
            }
        }
        Ok(Self {
            ids: (0..n).map(|i| i.to_string()).collect(),
            texts: (0..n).map(|i| format!("node {i}")).collect(),
            hierarchy: depth.into(),
            preds: Arc::new(preds),
            sensor,
            embedding,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }
}

/// One feature vector per graph node, rows in [`GraphIndex`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAssignment<F: Scalar> {
    pub ids: Arc<[String]>,
    pub hierarchy: Arc<[usize]>,
    pub features: Array2<F>,
}

impl<F: Scalar> FeatureAssignment<F> {
    pub fn new(graph: &GraphIndex, features: Array2<F>) -> Result<Self, ReasonError> {
        if features.nrows() != graph.len() {
            return Err(ReasonError::Shape(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                graph.len()
            )));
        }
        Ok(Self {
            ids: graph.ids.clone(),
            hierarchy: graph.hierarchy.clone(),
            features,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, F>> {
        self.ids.iter().position(|n| n == id).map(|i| self.features.row(i))
    }
}
