//! Mission-specific knowledge graphs: layered concept DAGs with a packet
//! sensor source and an embedding sink.

mod graph;
mod provider;
mod validate;
mod vocab;

use thiserror::Error;

pub use graph::{
    assemble_graph, assemble_graph_with, expand_concepts, generate_key_concepts, generate_mission_graph,
    normalize_concept, ConceptLayer, Connectivity, ExpansionReport, Expansion, KgParams, KnowledgeGraph, Node,
    NodeLevel,
};
pub use provider::{
    association_prompt, key_concept_prompt, parse_word_list, ConceptProvider, ConceptSource,
};
pub use validate::{validate_graph, ValidationReport, Violation};
pub use vocab::{corpus_vocab, kg_vocab, vocab_report, TermFrequencyTable};

use crate::provider::ProviderError;

#[derive(Debug, Error)]
pub enum KgError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed graph document: {0}")]
    Format(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
