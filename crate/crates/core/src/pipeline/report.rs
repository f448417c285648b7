use std::fmt::Write as _;
use std::path::Path;

use super::run::{load_kgs, ARTIFACT_CORPUS, ARTIFACT_EVAL, ARTIFACT_KGS};
use super::stages::EvalReport;
use super::PipelineError;
use crate::kg::{corpus_vocab, kg_vocab, vocab_report, KnowledgeGraph, TermFrequencyTable};
use crate::textgen::PairedCorpus;

const VOCAB_ROWS: usize = 10;

fn fmt_auc(v: Option<&f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

fn vocab_tables(out: &mut String, title: &str, tables: &[TermFrequencyTable]) {
    let _ = writeln!(out, "## {title}\n");
    for t in tables {
        let _ = writeln!(out, "### {} ({} tokens)\n", t.group, t.total_tokens);
        let _ = writeln!(out, "| term | count |\n|---|---|");
        for (term, n) in &t.rows {
            let _ = writeln!(out, "| {term} | {n} |");
        }
        out.push('\n');
    }
}

/// Markdown summary of an evaluation, its graphs and its training corpus.
pub fn render_report(eval: &EvalReport, kgs: &[KnowledgeGraph], corpus: &PairedCorpus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation report\n");
    let _ = writeln!(
        out,
        "config `{}`, {} training packets, {} test packets\n",
        eval.fingerprint, eval.train_size, eval.test_size
    );

    let _ = writeln!(out, "## Per-class AUC\n");
    let _ = write!(out, "| model |");
    for c in &eval.classes {
        let _ = write!(out, " {c} |");
    }
    let _ = writeln!(out, " mean |");
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(eval.classes.len()));
    for (name, m) in [("reasoner", &eval.reasoner), ("probe", &eval.probe)] {
        let _ = write!(out, "| {name} |");
        for c in &eval.classes {
            let _ = write!(out, " {} |", fmt_auc(m.per_class_auc.get(c)));
        }
        let _ = writeln!(out, " {:.4} |", m.mauc);
    }
    if !eval.reasoner.excluded.is_empty() {
        let _ = writeln!(out, "\nexcluded (single class in test split): {}", eval.reasoner.excluded.join(", "));
    }
    out.push('\n');

    let _ = writeln!(out, "## Top-k accuracy\n");
    let _ = writeln!(out, "| k | reasoner | probe | zero-shot |\n|---|---|---|---|");
    for (k, z) in &eval.zero_shot {
        let _ = writeln!(
            out,
            "| {k} | {} | {} | {z:.4} |",
            fmt_auc(eval.reasoner.top_k.get(k)),
            fmt_auc(eval.probe.top_k.get(k)),
        );
    }
    out.push('\n');

    vocab_tables(&mut out, "Graph vocabulary", &vocab_report(&kg_vocab(kgs), VOCAB_ROWS));
    let groups = corpus_vocab(corpus.pairs.iter().map(|p| (p.label.as_str(), p.text.as_str())));
    vocab_tables(&mut out, "Corpus vocabulary", &vocab_report(&groups, VOCAB_ROWS));

    let c = &eval.cost;
    let _ = writeln!(out, "## Cost\n");
    let _ = writeln!(out, "| quantity | value | reference | ratio |\n|---|---|---|---|");
    let _ = writeln!(
        out,
        "| reasoner parameters | {} | {} | {:.5} |",
        c.params,
        c.reference_params,
        c.param_ratio()
    );
    let _ = writeln!(out, "| projection head parameters | {} | | |", c.ssl_head_params);
    let _ = writeln!(
        out,
        "| FLOPs per streamed packet | {} | {} | {:.5} |",
        c.stream_step_flops,
        c.reference_token_flops,
        c.stream_flop_ratio()
    );
    let _ = writeln!(out, "| FLOPs per frame | {} | | |", c.frame_flops);
    let _ = writeln!(out, "| FLOPs per window from scratch | {} | | |", c.window_flops);
    let _ = writeln!(out, "\n{}", c.convention);
    out
}

/// Renders the report for a finished run directory.
pub fn report(dir: impl AsRef<Path>) -> Result<String, PipelineError> {
    let dir = dir.as_ref();
    let need = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::Missing(p.display().to_string()))
        }
    };
    let eval_path = need(ARTIFACT_EVAL)?;
    let kg_path = need(ARTIFACT_KGS)?;
    let corpus_path = need(ARTIFACT_CORPUS)?;
    let bytes = std::fs::read(&eval_path).map_err(|e| PipelineError::io(&eval_path, e))?;
    let eval: EvalReport = serde_json::from_slice(&bytes).map_err(|e| PipelineError::io(&eval_path, e))?;
    let kgs: Vec<KnowledgeGraph> = load_kgs(&kg_path)?.into_values().collect();
    let corpus = PairedCorpus::load(&corpus_path).map_err(|e| PipelineError::io(&corpus_path, e))?;
    Ok(render_report(&eval, &kgs, &corpus))
}

/// `model,class,auc` rows, with a `mean` row per model.
pub fn write_auc_csv(path: impl AsRef<Path>, eval: &EvalReport) -> Result<(), PipelineError> {
    let path = path.as_ref();
    let err = |e: csv::Error| PipelineError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["model", "class", "auc"]).map_err(err)?;
    for (name, m) in [("reasoner", &eval.reasoner), ("probe", &eval.probe)] {
        for (c, a) in &m.per_class_auc {
            w.write_record([name, c.as_str(), &a.to_string()]).map_err(err)?;
        }
        w.write_record([name, "mean", &m.mauc.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}
