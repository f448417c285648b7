use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::graph::KnowledgeGraph;
use crate::embed::tokenize;

/// Descending term frequencies for one group (mission or class).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFrequencyTable {
    pub group: String,
    pub total_tokens: usize,
    pub rows: Vec<(String, usize)>,
}

/// Counts tokens per group and keeps the `top_k` most frequent,
/// ties broken lexicographically.
pub fn vocab_report(groups: &BTreeMap<String, Vec<String>>, top_k: usize) -> Vec<TermFrequencyTable> {
    let top_k = top_k.max(1);
    groups
        .iter()
        .map(|(group, docs)| {
            let mut counts: HashMap<String, usize> = HashMap::new();
            let mut total = 0;
            for d in docs {
                for t in tokenize(d) {
                    *counts.entry(t).or_default() += 1;
                    total += 1;
                }
            }
            let mut rows: Vec<(String, usize)> = counts.into_iter().collect();
            rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            rows.truncate(top_k);
            TermFrequencyTable {
                group: group.clone(),
                total_tokens: total,
                rows,
            }
        })
        .collect()
}

/// Groups concept words by mission.
pub fn kg_vocab(kgs: &[KnowledgeGraph]) -> BTreeMap<String, Vec<String>> {
    kgs.iter()
        .map(|kg| (kg.mission.clone(), kg.concepts().map(str::to_string).collect()))
        .collect()
}

/// Groups texts by label.
pub fn corpus_vocab<'a>(items: impl IntoIterator<Item = (&'a str, &'a str)>) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (label, text) in items {
        out.entry(label.to_string()).or_default().push(text.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(text: &str) -> BTreeMap<String, Vec<String>> {
        [("g".to_string(), vec![text.to_string()])].into_iter().collect()
    }

    #[test]
    fn counts_single_sentence() {
        let t = vocab_report(&one("attack attack network"), 10);
        assert_eq!(t[0].rows, vec![("attack".to_string(), 2), ("network".to_string(), 1)]);
        let t = vocab_report(&one("attack attack network"), 1);
        assert_eq!(t[0].rows.len(), 1);
    }

    #[test]
    fn ties_lexicographic_and_sum_matches() {
        let docs = one("zeta alpha beta alpha zeta gamma");
        let t = &vocab_report(&docs, 100)[0];
        assert_eq!(
            t.rows,
            vec![("alpha".into(), 2), ("zeta".into(), 2), ("beta".into(), 1), ("gamma".into(), 1)]
        );
        let sum: usize = t.rows.iter().map(|r| r.1).sum();
        assert_eq!(sum, t.total_tokens);
        assert_eq!(sum, 6);
    }
}
