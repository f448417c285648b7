use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TemplateText, TextgenError};
use crate::ingest::FlowRecord;
use crate::kg::KnowledgeGraph;

const BUILTIN: &str = include_str!("../../data/templates.toml");
const FALLBACK_KEY: &str = "default";

/// Sentence templates keyed by label, with a `default` list for the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub by_label: BTreeMap<String, Vec<String>>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::from_toml_str(BUILTIN).expect("bundled templates parse")
    }
}

impl TemplateSet {
    pub fn from_toml_str(s: &str) -> Result<Self, TextgenError> {
        let by_label: BTreeMap<String, Vec<String>> =
            toml::from_str(s).map_err(|e| TextgenError::Format(e.to_string()))?;
        Ok(Self { by_label })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextgenError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| TextgenError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn single(label: &str, template: &str) -> Self {
        Self {
            by_label: [(label.to_string(), vec![template.to_string()])].into(),
        }
    }

    pub fn for_label(&self, label: &str) -> Option<&[String]> {
        self.by_label
            .get(label)
            .or_else(|| self.by_label.get(FALLBACK_KEY))
            .map(Vec::as_slice)
            .filter(|t| !t.is_empty())
    }
}

fn fill(template: &str, flow: &FlowRecord) -> Result<String, TextgenError> {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| TextgenError::Template(after.to_string()))?;
        let name = &after[..close];
        let value = flow
            .column(name)
            .ok_or_else(|| TextgenError::Template(name.to_string()))?;
        out.push_str(&value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Picks a template for the flow's label with a seeded draw and fills it.
pub fn render_template(flow: &FlowRecord, templates: &TemplateSet, seed: u64) -> Result<TemplateText, TextgenError> {
    let choices = templates
        .for_label(&flow.label)
        .ok_or_else(|| TextgenError::NoTemplates(flow.label.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = choices.choose(&mut rng).expect("non-empty");
    Ok(TemplateText {
        text: fill(template, flow)?,
        source_flow: flow.clone(),
        injected_concepts: Vec::new(),
    })
}

/// Appends `involving c1, c2, ...` with `k` concepts drawn without
/// replacement from every concept layer of `kg`.
pub fn inject_concepts(t: TemplateText, kg: &KnowledgeGraph, k: usize, seed: u64) -> TemplateText {
    if k == 0 {
        return t;
    }
    let available = kg.concept_count();
    if k > available {
        log::warn!(
            "requested {k} concepts but graph `{}` has {available}; injecting all",
            kg.mission
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(usize, &str)> = kg.concepts().enumerate().choose_multiple(&mut rng, k);
    if picked.is_empty() {
        return t;
    }
    // choose_multiple does not fix an order; shuffle for a seeded one
    picked.sort_unstable();
    picked.shuffle(&mut rng);
    let concepts: Vec<String> = picked.into_iter().map(|(_, c)| c.to_string()).collect();
    let base = t.text.trim_end().trim_end_matches('.');
    TemplateText {
        text: format!("{base} involving {}.", concepts.join(", ")),
        source_flow: t.source_flow,
        injected_concepts: concepts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{assemble_graph, ConceptLayer};

    fn flow() -> FlowRecord {
        FlowRecord {
            src_addr: "10.0.0.1".into(),
            dst_addr: "10.0.0.2".into(),
            src_port: 50000,
            dst_port: 80,
            protocol: "TCP".into(),
            start_us: 1_000_000,
            duration: 1.23456,
            packet_count: 12,
            byte_count: 900,
            rates: Default::default(),
            label: "dos".into(),
            aux: Default::default(),
        }
    }

    fn five_concepts() -> KnowledgeGraph {
        assemble_graph(
            "dos",
            vec![
                ConceptLayer {
                    index: 1,
                    concepts: vec!["flood".into(), "bandwidth".into(), "outage".into()],
                },
                ConceptLayer {
                    index: 2,
                    concepts: vec!["saturation".into(), "botnet".into()],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn fills_placeholders_exactly() {
        let set = TemplateSet::single("dos", "A {proto} flow to port {dst_port} carried {packet_count} packets.");
        let t = render_template(&flow(), &set, 3).unwrap();
        assert_eq!(t.text, "A TCP flow to port 80 carried 12 packets.");
        let set = TemplateSet::single("dos", "lasted {duration}s");
        assert_eq!(render_template(&flow(), &set, 0).unwrap().text, "lasted 1.235s");
    }

    #[test]
    fn deterministic_by_seed() {
        let set = TemplateSet::default();
        let a = render_template(&flow(), &set, 17).unwrap();
        let b = render_template(&flow(), &set, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_placeholder_names_it() {
        let set = TemplateSet::single("dos", "value {foo} here");
        match render_template(&flow(), &set, 0) {
            Err(TextgenError::Template(name)) => assert_eq!(name, "foo"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bundled_set_covers_generator_classes() {
        let set = TemplateSet::default();
        for n in [4, 10] {
            for label in crate::ingest::class_names(n) {
                assert!(set.by_label.get(&label).map_or(0, Vec::len) >= 5, "{label}");
            }
        }
        assert!(set.for_label("class_42").is_some());
        for (label, list) in &set.by_label {
            let mut f = flow();
            f.label = label.clone();
            for tpl in list {
                fill(tpl, &f).unwrap();
            }
        }
    }

    #[test]
    fn injection_identity_determinism_and_clamp() {
        let kg = five_concepts();
        let t = render_template(&flow(), &TemplateSet::single("dos", "Flood seen."), 0).unwrap();
        assert_eq!(inject_concepts(t.clone(), &kg, 0, 1), t);
        let a = inject_concepts(t.clone(), &kg, 2, 9);
        let b = inject_concepts(t.clone(), &kg, 2, 9);
        assert_eq!(a, b);
        assert_eq!(a.injected_concepts.len(), 2);
        assert!(a.text.starts_with("Flood seen involving "));
        let all = inject_concepts(t, &kg, 10, 9);
        let mut got = all.injected_concepts.clone();
        got.sort();
        assert_eq!(got, vec!["bandwidth", "botnet", "flood", "outage", "saturation"]);
    }
}
