use ndarray::{Array1, Array2, ArrayView1};

use super::{ContrastiveError, EncoderPair, SslHeads};
use crate::embed::cosine;
use crate::kg::KnowledgeGraph;
use crate::textgen::TemplateSet;
use crate::Scalar;

/// Prompt describing a class: its name, plus up to three key concepts from
/// its mission graph when one exists.
pub fn class_prompt(label: &str, kg: Option<&KnowledgeGraph>) -> String {
    let name = label.replace('_', " ");
    match kg.and_then(|g| g.layers.first()).filter(|l| !l.concepts.is_empty()) {
        Some(layer) => {
            let words: Vec<&str> = layer.concepts.iter().take(3).map(String::as_str).collect();
            format!("{name} traffic involving {}", words.join(", "))
        }
        None => format!("{name} traffic"),
    }
}

/// One prompt per description template of `label`: placeholders other than
/// `{label}` are dropped, and the graph's key concepts are appended as in
/// [`class_prompt`].
pub fn template_prompts(label: &str, templates: &TemplateSet, kg: Option<&KnowledgeGraph>) -> Vec<String> {
    let name = label.replace('_', " ");
    let tail = kg
        .and_then(|g| g.layers.first())
        .filter(|l| !l.concepts.is_empty())
        .map(|l| l.concepts.iter().take(3).map(String::as_str).collect::<Vec<_>>().join(", "));
    let mut out = vec![class_prompt(label, kg)];
    for t in templates.for_label(label).unwrap_or_default() {
        let mut text = String::with_capacity(t.len());
        let mut rest = t.as_str();
        while let Some(open) = rest.find('{') {
            text.push_str(&rest[..open]);
            let Some(close) = rest[open..].find('}') else { break };
            if &rest[open + 1..open + close] == "label" {
                text.push_str(&name);
            }
            rest = &rest[open + close + 1..];
        }
        text.push_str(rest);
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        let text = text.trim_end_matches('.');
        out.push(match &tail {
            Some(c) => format!("{text} involving {c}."),
            None => format!("{text}."),
        });
    }
    out
}

/// Class prompts embedded once, for ranking many packets. A label given
/// several prompts is represented by the mean of their unit embeddings.
#[derive(Debug, Clone)]
pub struct ZeroShotClassifier<F: Scalar> {
    pub labels: Vec<String>,
    prompts: Array2<F>,
}

impl<F: Scalar> ZeroShotClassifier<F> {
    pub fn new(heads: &SslHeads<F>, enc: &EncoderPair, class_prompts: &[(String, String)]) -> Result<Self, ContrastiveError> {
        if class_prompts.is_empty() {
            return Err(ContrastiveError::Config("no class prompts".into()));
        }
        let mut labels: Vec<String> = Vec::new();
        for (l, _) in class_prompts {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
        let mut prompts = Array2::zeros((labels.len(), heads.embed_dim()));
        for (l, text) in class_prompts {
            let i = labels.iter().position(|x| x == l).expect("collected above");
            let z = heads.embed_text(text, enc)?;
            let norm = z.dot(&z).sqrt();
            if norm > F::zero() {
                let mut row = prompts.row_mut(i);
                row.scaled_add(norm.recip(), &z);
            }
        }
        Ok(Self { labels, prompts })
    }

    /// Cosine of the packet embedding with each class prompt, in label order.
    pub fn scores(&self, z_packet: ArrayView1<'_, F>) -> Array1<F> {
        self.prompts.rows().into_iter().map(|p| cosine(z_packet, p)).collect()
    }

    /// Labels by descending score; equal scores keep label order.
    pub fn rank_embedding(&self, z_packet: ArrayView1<'_, F>) -> Vec<String> {
        let s = self.scores(z_packet);
        let mut idx: Vec<usize> = (0..self.labels.len()).collect();
        idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
        idx.into_iter().map(|i| self.labels[i].clone()).collect()
    }

    pub fn rank(&self, payload: &[u8], heads: &SslHeads<F>, enc: &EncoderPair) -> Result<Vec<String>, ContrastiveError> {
        Ok(self.rank_embedding(heads.embed_packet(payload, enc)?.view()))
    }
}

/// The `k` best-matching labels for one payload.
pub fn zero_shot_classify<F: Scalar>(
    payload: &[u8],
    heads: &SslHeads<F>,
    enc: &EncoderPair,
    class_prompts: &[(String, String)],
    k: usize,
) -> Result<Vec<String>, ContrastiveError> {
    let n = class_prompts.iter().map(|(l, _)| l).collect::<std::collections::BTreeSet<_>>().len();
    if k == 0 || k > n {
        return Err(ContrastiveError::Config(format!(
            "k must be in 1..={}, got {k}",
            n
        )));
    }
    let clf = ZeroShotClassifier::new(heads, enc, class_prompts)?;
    let mut ranked = clf.rank(payload, heads, enc)?;
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::SslMode;

    fn prompts() -> Vec<(String, String)> {
        ["benign", "dos", "reconnaissance", "brute_force", "port_scan"]
            .iter()
            .map(|l| (l.to_string(), class_prompt(l, None)))
            .collect()
    }

    #[test]
    fn full_ranking_is_permutation_and_prefix() {
        let heads = SslHeads::<f64>::for_encoders(SslMode::Both, &EncoderPair::default(), 16, 4).unwrap();
        let enc = EncoderPair::default();
        let p = prompts();
        let payload = b"GET /index.html HTTP/1.1";
        let mut all = zero_shot_classify(payload, &heads, &enc, &p, 5).unwrap();
        let top1 = zero_shot_classify(payload, &heads, &enc, &p, 1).unwrap();
        assert_eq!(top1[0], all[0]);
        all.sort();
        let mut labels: Vec<String> = p.iter().map(|x| x.0.clone()).collect();
        labels.sort();
        assert_eq!(all, labels);
        assert!(zero_shot_classify(payload, &heads, &enc, &p, 6).is_err());
    }

    #[test]
    fn identical_prompts_tie_in_label_order() {
        let heads = SslHeads::<f64>::for_encoders(SslMode::Both, &EncoderPair::default(), 16, 4).unwrap();
        let enc = EncoderPair::default();
        let p = vec![
            ("zeta".to_string(), "same words".to_string()),
            ("alpha".to_string(), "same words".to_string()),
        ];
        for _ in 0..3 {
            assert_eq!(zero_shot_classify(b"x", &heads, &enc, &p, 2).unwrap(), vec!["zeta", "alpha"]);
        }
    }

    #[test]
    fn prompt_mentions_key_concepts() {
        let kg = crate::kg::assemble_graph(
            "dos",
            vec![crate::kg::ConceptLayer {
                index: 1,
                concepts: vec!["flood".into(), "outage".into(), "botnet".into(), "extra".into()],
            }],
        )
        .unwrap();
        assert_eq!(class_prompt("dos", Some(&kg)), "dos traffic involving flood, outage, botnet");
        assert_eq!(class_prompt("brute_force", None), "brute force traffic");
    }

    #[test]
    fn template_prompts_drop_flow_fields() {
        let t = TemplateSet::single("dos", "A flood of {packet_count} packets hit {dst_addr}, typical of {label}.");
        let p = template_prompts("syn_flood", &t, None);
        assert_eq!(p, vec!["syn flood traffic".to_string()]);
        let p = template_prompts("dos", &t, None);
        assert_eq!(p[1], "A flood of packets hit , typical of dos.");
    }

    #[test]
    fn repeated_labels_average_into_one_prompt() {
        let heads = SslHeads::<f64>::for_encoders(SslMode::Both, &EncoderPair::default(), 16, 4).unwrap();
        let enc = EncoderPair::default();
        let p = vec![
            ("a".to_string(), "port scan probe".to_string()),
            ("b".to_string(), "flood burst".to_string()),
            ("a".to_string(), "sweep of services".to_string()),
        ];
        let clf = ZeroShotClassifier::new(&heads, &enc, &p).unwrap();
        assert_eq!(clf.labels, vec!["a", "b"]);
        assert_eq!(zero_shot_classify(b"x", &heads, &enc, &p, 2).unwrap().len(), 2);
        assert!(zero_shot_classify(b"x", &heads, &enc, &p, 3).is_err());
    }
}
