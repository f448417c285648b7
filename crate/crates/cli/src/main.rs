use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wiretext::contrastive::SslMode;
use wiretext::eval::write_curve_csv;
use wiretext::kg::{generate_mission_graph, validate_graph, ConceptProvider, KgParams};
use wiretext::pipeline::{
    cost_estimate, infer, report, run_pipeline, sweep, write_auc_csv, EvalReport, PipelineConfig, PipelineError,
    RunOptions, ARTIFACT_EVAL,
};
use wiretext::provider::HttpSettings;
use wiretext::reason::write_scores;

#[derive(Parser)]
#[command(name = "wiretext", version, about = "Packet-text alignment and knowledge-graph reasoning for intrusion detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Recompute every stage instead of reusing current artifacts.
    #[arg(long)]
    fresh: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration.
    Config,
    /// Run every stage, or up to `--until`.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Reuse stages whose configuration and artifacts are unchanged.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        until: Option<String>,
    },
    /// Read the capture (or generate synthetic traffic) and label packets.
    Ingest(ConfigArg),
    /// Build the mission graphs, or generate a single graph.
    Kg {
        #[command(subcommand)]
        action: Option<KgAction>,
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        fresh: bool,
    },
    /// Build the paired text/packet corpus from the training split.
    Corpus(ConfigArg),
    /// Train the projection heads.
    Pretrain {
        #[command(flatten)]
        base: ConfigArg,
        #[arg(long, value_parser = parse_ssl_mode)]
        ssl_mode: Option<SslMode>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Train the reasoner.
    Train {
        #[command(flatten)]
        base: ConfigArg,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Stream the held-out packets through the trained reasoner.
    Infer {
        #[arg(long, short)]
        config: PathBuf,
        /// Scores file (JSON lines); defaults to standard output.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Score the reasoner, the packet probe and zero-shot ranking.
    Evaluate {
        #[command(flatten)]
        base: ConfigArg,
        /// Also write per-class AUC rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Retrain at each configured training fraction.
    Sweep {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Parameter and FLOP counts of the configured reasoner.
    Cost {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Render a finished run as markdown.
    Report {
        /// Output directory of a run.
        dir: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum KgAction {
    /// Generate one mission graph and print its JSON.
    Generate {
        #[arg(long)]
        mission: String,
        #[arg(long, default_value_t = 10)]
        v: usize,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Provider::Stub)]
        provider: Provider,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chat-completion endpoint for the http provider.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Stub,
    Http,
}

fn parse_ssl_mode(s: &str) -> Result<SslMode, String> {
    s.parse()
}

/// Error with the stage (or subcommand) it came from.
struct Tagged {
    tag: String,
    err: anyhow::Error,
}

fn tagged(tag: &str) -> impl Fn(anyhow::Error) -> Tagged + '_ {
    move |err| {
        let tag = err
            .downcast_ref::<PipelineError>()
            .and_then(PipelineError::stage_name)
            .unwrap_or(tag)
            .to_string();
        Tagged { tag, err }
    }
}

fn load(path: &Path) -> Result<PipelineConfig> {
    Ok(PipelineConfig::load(path)?)
}

fn run_stage(cfg: &PipelineConfig, stage: &str, fresh: bool) -> Result<()> {
    let summary = run_pipeline(
        cfg,
        &RunOptions {
            resume: !fresh,
            until: Some(stage.to_string()),
        },
    )?;
    for s in &summary.skipped {
        log::info!("{s}: up to date");
    }
    println!("{}: artifacts in {}", stage, cfg.output.display());
    Ok(())
}

fn print_eval(r: &EvalReport) {
    println!("reasoner mAUC {:.4}, probe mAUC {:.4}", r.reasoner.mauc, r.probe.mauc);
    for (k, acc) in &r.zero_shot {
        println!("zero-shot top-{k} {acc:.4}");
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(action: KgAction) -> Result<()> {
    let KgAction::Generate {
        mission,
        v,
        n,
        provider,
        seed,
        endpoint,
        model,
        out,
    } = action;
    let source = match provider {
        Provider::Stub => ConceptProvider::Stub { seed },
        Provider::Http => {
            let endpoint = endpoint.ok_or_else(|| anyhow!("--endpoint is required with --provider http"))?;
            let mut s: HttpSettings = serde_json::from_value(serde_json::json!({ "endpoint": endpoint }))?;
            if let Some(m) = model {
                s.model = m;
            }
            ConceptProvider::Http(s)
        }
    };
    let params = KgParams {
        v,
        n,
        ..KgParams::default()
    };
    let (kg, exp) = generate_mission_graph(&mission, &params, &source)?;
    let report = validate_graph(&kg);
    if !report.is_valid() {
        bail!("generated graph is invalid: {:?}", report.violations);
    }
    if exp.stopped_at.is_some() || exp.removed_overlaps > 0 {
        log::warn!("expansion: {exp:?}");
    }
    let text = serde_json::to_string_pretty(&kg.to_json())? + "\n";
    write_out(out.as_deref(), &text)
}

fn dispatch(cmd: Command) -> Result<(), Tagged> {
    match cmd {
        Command::Config => {
            print!("{}", PipelineConfig::default().to_toml_string());
            Ok(())
        }
        Command::Run { config, resume, until } => (|| {
            let cfg = load(&config)?;
            let summary = run_pipeline(&cfg, &RunOptions { resume, until })?;
            println!("ran: {}", summary.executed.join(", "));
            if !summary.skipped.is_empty() {
                println!("up to date: {}", summary.skipped.join(", "));
            }
            if let Some(r) = &summary.report {
                print_eval(r);
            }
            Ok(())
        })()
        .map_err(tagged("run")),
        Command::Ingest(a) => load(&a.config).and_then(|c| run_stage(&c, "ingest", a.fresh)).map_err(tagged("ingest")),
        Command::Kg { action, config, fresh } => match (action, config) {
            (Some(action), _) => generate(action).map_err(tagged("kg")),
            (None, Some(config)) => load(&config).and_then(|c| run_stage(&c, "kg", fresh)).map_err(tagged("kg")),
            (None, None) => Err(tagged("kg")(anyhow!("pass --config or `kg generate`"))),
        },
        Command::Corpus(a) => load(&a.config).and_then(|c| run_stage(&c, "corpus", a.fresh)).map_err(tagged("corpus")),
        Command::Pretrain {
            base,
            ssl_mode,
            steps,
            batch,
            tau,
        } => (|| {
            let mut cfg = load(&base.config)?;
            let c = &mut cfg.contrastive;
            if let Some(m) = ssl_mode {
                c.ssl_mode = m;
            }
            c.steps = steps.unwrap_or(c.steps);
            c.batch = batch.unwrap_or(c.batch);
            c.tau = tau.unwrap_or(c.tau);
            run_stage(&cfg, "pretrain", base.fresh)
        })()
        .map_err(tagged("pretrain")),
        Command::Train { base, steps, batch, lr } => (|| {
            let mut cfg = load(&base.config)?;
            let r = &mut cfg.reasoner;
            r.steps = steps.unwrap_or(r.steps);
            r.batch = batch.unwrap_or(r.batch);
            r.adam.lr = lr.unwrap_or(r.adam.lr);
            run_stage(&cfg, "train", base.fresh)
        })()
        .map_err(tagged("train")),
        Command::Infer { config, out } => (|| {
            let cfg = load(&config)?;
            let scores = infer(&cfg)?;
            match out {
                Some(p) => write_scores(&p, &scores)?,
                None => {
                    for s in &scores {
                        println!("{}", serde_json::to_string(s)?);
                    }
                }
            }
            Ok(())
        })()
        .map_err(tagged("infer")),
        Command::Evaluate { base, csv } => (|| {
            let cfg = load(&base.config)?;
            run_stage(&cfg, "evaluate", base.fresh)?;
            let path = cfg.output.join(ARTIFACT_EVAL);
            let r: EvalReport = serde_json::from_slice(&std::fs::read(&path)?)?;
            print_eval(&r);
            if let Some(p) = csv {
                write_auc_csv(p, &r)?;
            }
            Ok(())
        })()
        .map_err(tagged("evaluate")),
        Command::Sweep { config, csv } => (|| {
            let cfg = load(&config)?;
            let points = sweep(&cfg)?;
            for p in &points {
                match (p.mauc, &p.error) {
                    (Some(m), _) => println!("fraction {:.2}: {} packets, mAUC {m:.4}", p.fraction, p.train_size),
                    (None, Some(e)) => println!("fraction {:.2}: failed ({e})", p.fraction),
                    (None, None) => println!("fraction {:.2}: no score", p.fraction),
                }
            }
            if let Some(p) = csv {
                write_curve_csv(p, &points)?;
            }
            Ok(())
        })()
        .map_err(tagged("sweep")),
        Command::Cost { config } => (|| {
            let cfg = load(&config)?;
            let cost = cost_estimate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&cost)?);
            Ok(())
        })()
        .map_err(tagged("cost")),
        Command::Report { dir, csv } => (|| {
            print!("{}", report(&dir)?);
            if let Some(p) = csv {
                let path = dir.join(ARTIFACT_EVAL);
                let r: EvalReport = serde_json::from_slice(&std::fs::read(&path)?)?;
                write_auc_csv(p, &r)?;
            }
            Ok(())
        })()
        .map_err(tagged("report")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Tagged { tag, err }) => {
            eprintln!("error [{tag}]: {err:#}");
            ExitCode::FAILURE
        }
    }
}
