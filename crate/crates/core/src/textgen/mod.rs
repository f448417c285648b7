//! Natural-language descriptions of flows: template rendering, concept
//! injection from mission graphs, and paraphrasing.

mod corpus;
mod paraphrase;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FlowRecord;
use crate::provider::{HttpSettings, ProviderError};

pub use corpus::{build_corpus, BuildReport, CorpusOptions, CorpusPair, PairedCorpus};
pub use paraphrase::{paraphrase, paraphrase_all, stub_paraphrase, token_overlap};
pub use template::{inject_concepts, render_template, TemplateSet};

#[derive(Debug, Error)]
pub enum TextgenError {
    #[error("template placeholder `{0}` names no flow column")]
    Template(String),
    #[error("no templates for label `{0}`")]
    NoTemplates(String),
    #[error("paraphrase failed: {source}")]
    Provider {
        #[source]
        source: ProviderError,
        /// The unparaphrased text, for falling back to template provenance.
        original: String,
    },
    #[error("label `{0}` has no knowledge graph")]
    MissingGraph(String),
    #[error("template file: {0}")]
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

/// A filled template plus any concepts appended to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateText {
    pub text: String,
    pub source_flow: FlowRecord,
    pub injected_concepts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Template,
    Paraphrased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSample {
    pub text: String,
    pub label: String,
    pub provenance: Provenance,
}

impl TextSample {
    /// Keeps the unparaphrased text.
    pub fn from_template(t: &TemplateText) -> Self {
        Self {
            text: t.text.clone(),
            label: t.source_flow.label.clone(),
            provenance: Provenance::Template,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParaphraseProvider {
    Stub {
        seed: u64,
    },
    Http {
        #[serde(flatten)]
        settings: HttpSettings,
        /// Upper bound on concurrent requests.
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
    /// Leaves text as rendered.
    None,
}

fn default_in_flight() -> usize {
    4
}

impl Default for ParaphraseProvider {
    fn default() -> Self {
        ParaphraseProvider::Stub { seed: 0 }
    }
}
