use std::collections::HashMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParaphraseProvider, Provenance, TemplateText, TextSample, TextgenError};
use crate::derive_seed;
use crate::embed::tokenize;
use crate::provider::{chat, ProviderError};

const SYNONYMS: &[(&str, &[&str])] = &[
    ("flow", &["stream", "session"]),
    ("session", &["exchange", "connection"]),
    ("connection", &["session", "link"]),
    ("traffic", &["activity", "communication"]),
    ("carried", &["transported", "contained"]),
    ("sent", &["transmitted", "delivered"]),
    ("reached", &["arrived at", "hit"]),
    ("hit", &["struck", "reached"]),
    ("packets", &["frames", "datagrams"]),
    ("bytes", &["octets"]),
    ("host", &["machine", "node"]),
    ("over", &["across", "during"]),
    ("within", &["inside", "in under"]),
    ("lasted", &["ran for", "persisted for"]),
    ("attack", &["assault", "offensive"]),
    ("attempts", &["tries", "efforts"]),
    ("repeated", &["recurring", "persistent"]),
    ("many", &["numerous", "plenty of"]),
    ("burst", &["spike", "surge"]),
    ("flood", &["deluge", "torrent"]),
    ("flooded", &["swamped", "inundated"]),
    ("overwhelmed", &["swamped", "saturated"]),
    ("target", &["victim", "destination"]),
    ("targeted", &["aimed at", "went after"]),
    ("probed", &["tested", "examined"]),
    ("probes", &["tests", "checks"]),
    ("scan", &["sweep", "survey"]),
    ("normal", &["ordinary", "typical"]),
    ("routine", &["regular", "everyday"]),
    ("regular", &["routine", "periodic"]),
    ("legitimate", &["valid", "authorized"]),
    ("expected", &["anticipated", "usual"]),
    ("observed", &["seen", "recorded"]),
    ("used", &["employed", "relied on"]),
    ("service", &["server", "daemon"]),
    ("tried", &["attempted", "tested"]),
    ("moved", &["transferred", "shifted"]),
    ("showed", &["displayed", "exhibited"]),
    ("high-rate", &["rapid", "intense"]),
    ("short", &["brief", "small"]),
    ("slow", &["sluggish", "gradual"]),
    ("total", &["sum", "aggregate"]),
    ("toward", &["towards", "against"]),
    ("against", &["toward", "versus"]),
    ("produced", &["generated", "created"]),
    ("typical", &["characteristic", "common"]),
];

const MARKERS: &[&str] = &["Notably,", "In short,", "Put simply,", "In summary,"];

fn text_hash(text: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Lowercases a leading capital unless the word looks like an acronym.
fn decapitalize(s: &str) -> String {
    let mut c = s.chars();
    match (c.next(), c.next()) {
        (Some(a), Some(b)) if a.is_uppercase() && b.is_lowercase() => {
            let mut out: String = a.to_lowercase().collect();
            out.push_str(&s[a.len_utf8()..]);
            out
        }
        _ => s.to_string(),
    }
}

fn substitute(text: &str, rng: &mut ChaCha8Rng) -> String {
    let table: HashMap<&str, &[&str]> = SYNONYMS.iter().copied().collect();
    let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let budget = words.len() / 3;
    let candidates: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| {
            let core = w.trim_end_matches(|c: char| c.is_ascii_punctuation());
            table.contains_key(core.to_lowercase().as_str())
        })
        .map(|(i, _)| i)
        .collect();
    let mut chosen = candidates.into_iter().choose_multiple(rng, budget);
    chosen.sort_unstable();
    for i in chosen {
        let w = &words[i];
        let core = w.trim_end_matches(|c: char| c.is_ascii_punctuation());
        let tail = &w[core.len()..];
        let alt = table[core.to_lowercase().as_str()].choose(rng).expect("non-empty");
        let alt = if core.starts_with(char::is_uppercase) {
            capitalize(alt)
        } else {
            alt.to_string()
        };
        words[i] = format!("{alt}{tail}");
    }
    words.join(" ")
}

fn rotate_clauses(text: &str) -> String {
    let body = text.trim_end_matches('.');
    let clauses: Vec<&str> = body.split(", ").collect();
    if clauses.len() < 2 {
        return text.to_string();
    }
    let mut rotated: Vec<String> = clauses[1..].iter().map(|c| c.to_string()).collect();
    rotated.push(decapitalize(clauses[0]));
    rotated[0] = capitalize(&rotated[0]);
    format!("{}.", rotated.join(", "))
}

/// Deterministic offline paraphrase: seeded synonym substitution on at most a
/// third of the words, then clause rotation. Falls back to a leading marker
/// phrase when neither step changes the text.
pub fn stub_paraphrase(text: &str, seed: u64) -> String {
    let text = text.trim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, text_hash(text)));
    if text.is_empty() {
        return MARKERS.choose(&mut rng).expect("non-empty").trim_end_matches(',').to_string();
    }
    let out = rotate_clauses(&substitute(text, &mut rng));
    if out != text {
        return out;
    }
    let marker = MARKERS.choose(&mut rng).expect("non-empty");
    format!("{marker} {}", decapitalize(text))
}

/// Multiset token overlap `|A ∩ B| / max(|A|, |B|)`.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let count = |s: &str| {
        let mut m: HashMap<String, usize> = HashMap::new();
        for t in tokenize(s) {
            *m.entry(t).or_default() += 1;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let na: usize = ca.values().sum();
    let nb: usize = cb.values().sum();
    if na.max(nb) == 0 {
        return 1.0;
    }
    let shared: usize = ca.iter().map(|(t, n)| (*n).min(cb.get(t).copied().unwrap_or(0))).sum();
    shared as f64 / na.max(nb) as f64
}

fn paraphrase_prompt(text: &str) -> String {
    format!(
        "Paraphrase the following description of network traffic as one sentence. Keep every number and address unchanged.\n\n{text}"
    )
}

pub fn paraphrase(t: &TemplateText, provider: &ParaphraseProvider) -> Result<TextSample, TextgenError> {
    let label = t.source_flow.label.clone();
    match provider {
        ParaphraseProvider::None => Ok(TextSample::from_template(t)),
        ParaphraseProvider::Stub { seed } => Ok(TextSample {
            text: stub_paraphrase(&t.text, *seed),
            label,
            provenance: Provenance::Paraphrased,
        }),
        ParaphraseProvider::Http { settings, .. } => {
            let out = chat(settings, &paraphrase_prompt(&t.text)).and_then(|s| {
                let s = s.trim().to_string();
                if s.is_empty() {
                    Err(ProviderError::Empty)
                } else {
                    Ok(s)
                }
            });
            match out {
                Ok(text) => Ok(TextSample {
                    text,
                    label,
                    provenance: Provenance::Paraphrased,
                }),
                Err(source) => Err(TextgenError::Provider {
                    source,
                    original: t.text.clone(),
                }),
            }
        }
    }
}

/// Paraphrases every text, in input order. HTTP requests run at most
/// `max_in_flight` at a time.
pub fn paraphrase_all(texts: &[TemplateText], provider: &ParaphraseProvider) -> Vec<Result<TextSample, TextgenError>> {
    let limit = match provider {
        ParaphraseProvider::Http { max_in_flight, .. } => (*max_in_flight).max(1),
        _ => return texts.iter().map(|t| paraphrase(t, provider)).collect(),
    };
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(limit) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|t| s.spawn(move || paraphrase(t, provider))).collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("paraphrase worker panicked")));
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FlowRecord;
    use crate::provider::testing::serve;
    use crate::provider::HttpSettings;
    use proptest::prelude::*;

    fn tt(text: &str) -> TemplateText {
        TemplateText {
            text: text.into(),
            source_flow: FlowRecord {
                src_addr: "a".into(),
                dst_addr: "b".into(),
                src_port: 1,
                dst_port: 2,
                protocol: "TCP".into(),
                start_us: 0,
                duration: 0.0,
                packet_count: 0,
                byte_count: 0,
                rates: Default::default(),
                label: "dos".into(),
                aux: Default::default(),
            },
            injected_concepts: vec![],
        }
    }

    #[test]
    fn stub_is_deterministic() {
        let x = "A TCP flow to port 80 carried 12 packets over 1.000 seconds.";
        assert_eq!(stub_paraphrase(x, 4), stub_paraphrase(x, 4));
        let p = paraphrase(&tt(x), &ParaphraseProvider::Stub { seed: 4 }).unwrap();
        assert_eq!(p.provenance, Provenance::Paraphrased);
        assert_eq!(p.label, "dos");
    }

    #[test]
    fn clause_rotation() {
        assert_eq!(rotate_clauses("Alpha beta, gamma delta."), "Gamma delta, alpha beta.");
        assert_eq!(rotate_clauses("No clauses here."), "No clauses here.");
    }

    #[test]
    fn unchanged_text_gets_marker() {
        let out = stub_paraphrase("zq xv wk yp", 0);
        assert_ne!(out, "zq xv wk yp");
        assert!(out.ends_with("zq xv wk yp"));
        assert!(!stub_paraphrase("", 0).is_empty());
    }

    #[test]
    fn empty_http_body_falls_back() {
        let (url, _) = serve(200, "", 1);
        let provider = ParaphraseProvider::Http {
            settings: HttpSettings::new(url),
            max_in_flight: 2,
        };
        let t = tt("Host a sent packets.");
        match paraphrase(&t, &provider) {
            Err(TextgenError::Provider { original, .. }) => {
                assert_eq!(original, t.text);
                assert_eq!(TextSample::from_template(&t).provenance, Provenance::Template);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn http_results_keep_input_order() {
        let body = r#"{"choices":[{"message":{"content":"rephrased"}}]}"#;
        let (url, log) = serve(200, body, 5);
        let provider = ParaphraseProvider::Http {
            settings: HttpSettings::new(url),
            max_in_flight: 2,
        };
        let texts: Vec<_> = (0..5).map(|i| tt(&format!("sentence {i}"))).collect();
        let out = paraphrase_all(&texts, &provider);
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|r| r.as_ref().unwrap().text == "rephrased"));
        assert_eq!(log.lock().unwrap().len(), 5);
    }

    const WORDS: &[&str] = &[
        "host", "flow", "packets", "sent", "toward", "port", "the", "target", "observed", "traffic", "many",
        "within", "zq", "seconds", "attack", "bytes", "slow",
    ];

    proptest! {
        #[test]
        fn stub_changes_text_and_keeps_overlap(
            idx in proptest::collection::vec(0usize..WORDS.len(), 4..20),
            commas in proptest::collection::vec(any::<bool>(), 20),
            seed in any::<u64>(),
        ) {
            let mut s = String::new();
            for (i, w) in idx.iter().enumerate() {
                if i > 0 {
                    s.push_str(if commas[i] { ", " } else { " " });
                }
                s.push_str(WORDS[*w]);
            }
            s = format!("{}.", capitalize(&s));
            let out = stub_paraphrase(&s, seed);
            prop_assert_ne!(&out, &s);
            prop_assert!(!out.is_empty());
            prop_assert!(token_overlap(&s, &out) >= 0.5, "{} -> {}", s, out);
        }
    }
}
