use std::path::Path;
use std::process::{Command, Output};

fn wiretext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wiretext"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        r#"
seed = 2
output = "out"
[data]
kind = "synth"
per_class = 100
episode_len = [15, 30]
[contrastive]
steps = 15
batch = 32
[reasoner]
steps = 6
batch = 8
window = 8
[eval]
sweep_fractions = [0.5, 1.0]
"#,
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn default_config_is_valid_toml() {
    let o = wiretext(&["config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("[reasoner]") && text.contains("[contrastive]"));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, text).unwrap();
    let o = wiretext(&["cost", "--config", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cost: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cost["params"], 118_884);
}

#[test]
fn stages_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for stage in ["ingest", "kg", "corpus"] {
        let o = wiretext(&[stage, "--config", &cfg]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let o = wiretext(&["pretrain", "--config", &cfg, "--ssl-mode", "packet-only", "--steps", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = wiretext(&["train", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));

    let scores = dir.path().join("scores.jsonl");
    let o = wiretext(&["infer", "--config", &cfg, "--out", scores.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(&scores).unwrap();
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first.get("label").is_some());

    let csv = dir.path().join("auc.csv");
    let o = wiretext(&["evaluate", "--config", &cfg, "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("reasoner mAUC"));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("model,class,auc"));

    let out = dir.path().join("out");
    let o = wiretext(&["report", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = stdout(&o);
    assert!(md.contains("## Per-class AUC") && md.contains(" mean |"));
}

#[test]
fn run_resume_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = wiretext(&["run", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::remove_file(dir.path().join("out/corpus.jsonl")).unwrap();
    let o = wiretext(&["run", "--config", &cfg, "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("ran: corpus, pretrain, train, evaluate"), "{text}");
    assert!(text.contains("up to date: ingest, kg"), "{text}");

    let curve = dir.path().join("curve.csv");
    let o = wiretext(&["sweep", "--config", &cfg, "--csv", curve.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("fraction")).count(), 2);
    assert!(curve.exists());
}

#[test]
fn kg_generate_prints_graph() {
    let o = wiretext(&["kg", "generate", "--mission", "dos", "--v", "4", "--n", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(g["mission"], "dos");
    assert!(g["nodes"].as_array().unwrap().len() >= 6);
    let o = wiretext(&["kg", "generate", "--mission", "dos", "--provider", "http"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--endpoint"));
}

#[test]
fn failures_are_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let o = wiretext(&["report", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("[report]") && err.contains("eval.json"), "{err}");

    let pcap = dir.path().join("bad.pcap");
    let flows = dir.path().join("flows.csv");
    std::fs::write(&pcap, b"garbage").unwrap();
    std::fs::write(&flows, b"label\n").unwrap();
    let cfg = dir.path().join("cap.toml");
    std::fs::write(
        &cfg,
        format!("[data]\nkind = \"capture\"\npcap = {:?}\nflows = {:?}\n", pcap.to_str().unwrap(), flows.to_str().unwrap()),
    )
    .unwrap();
    let o = wiretext(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("[ingest]"), "{}", stderr(&o));

    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    let o = wiretext(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("[train]"));
}
