use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use madp::config::{BackendConfig, BackendKind, PipelineConfig, Unscripted};
use madp::engine::Stage;
use madp::eval::{run_eval, Corpus, EvalOptions, CORPUS_BACKEND};
use madp::fixtures::{generate, DEFAULT_SEED};
use madp::store::TaskStatus;
use madp::sustain::{comparison, render_comparison, scenario_report, ScenarioParams};
use madp::workspace::{ingest_new, read_bundles, Workspace};

#[derive(Parser)]
#[command(
    name = "madp",
    version,
    about = "Document processing pipeline with human review"
)]
struct Cli {
    /// Workspace directory holding the event log, signatures and prompts.
    #[arg(long, global = true, env = "MADP_DATA", default_value = "madp-data")]
    data: PathBuf,
    /// Pipeline config (JSON). Defaults to <data>/config.json, then built-in defaults.
    #[arg(long, global = true, env = "MADP_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register document bundles (*.json) from a directory.
    Ingest { dir: PathBuf },
    /// Train header signatures on a labeled corpus.
    Train { corpus: PathBuf },
    /// Drive every unfinished document to a terminal or review state.
    Run {
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
    /// Serve the review API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Evaluate against a labeled corpus.
    Eval {
        corpus: PathBuf,
        /// Stages to replace with a passthrough (classifier, splitter, parser, validator).
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<Stage>,
        /// Leave review tasks open instead of resolving them from the truth.
        #[arg(long)]
        no_hitl: bool,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sustainability report for one scenario, or the full comparison.
    Sustain {
        #[arg(long, conflicts_with = "params")]
        scenario: Option<String>,
        /// Scenario parameters (JSON).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Review queue.
    Queue {
        #[command(subcommand)]
        action: QueueAction,
    },
    /// Write the synthetic labeled corpus.
    Fixtures {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum QueueAction {
    /// List tasks oldest first as JSON.
    Ls {
        #[arg(long)]
        status: Option<TaskStatus>,
    },
}

/// Prints a line, treating a closed pipe (`madp queue ls | head`) as success.
fn say(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => say(text),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let ws = || Workspace::open(&cli.data, cli.config.as_deref());
    match &cli.command {
        Command::Ingest { dir } => {
            let ws = ws()?;
            let mut engine = ws.engine()?;
            let bundles = read_bundles(dir)?;
            let (added, skipped) = ingest_new(&mut engine, bundles)?;
            say(&format!(
                "ingested {added} bundles ({skipped} already present)"
            ))?;
        }
        Command::Train { corpus } => {
            let corpus = Corpus::load(corpus)?;
            let n = ws()?.train(&corpus)?;
            say(&format!("trained {n} category signatures"))?;
        }
        Command::Run { jobs } => {
            let mut engine = ws()?.engine()?;
            let stats = engine.run_all(*jobs)?;
            say(&serde_json::to_string_pretty(&stats)?)?;
        }
        Command::Serve { port, host } => {
            let engine = ws()?.engine()?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .context("invalid listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(madp::service::serve(engine, addr))?;
        }
        Command::Eval {
            corpus,
            ablate,
            no_hitl,
            jobs,
            json,
            out,
        } => {
            let corpus = Corpus::load(corpus)?;
            let options = EvalOptions {
                ablate: ablate.iter().copied().collect(),
                hitl: !no_hitl,
                jobs: *jobs,
                config: match &cli.config {
                    Some(_) => Some(ws()?.config),
                    None => None,
                },
                log_path: None,
            };
            let (report, _) = run_eval(&corpus, &options)?;
            let text = if *json {
                serde_json::to_string_pretty(&report)?
            } else {
                report.to_markdown()
            };
            emit(&text, out.as_deref())?;
        }
        Command::Sustain {
            scenario,
            params,
            json,
            out,
        } => {
            let params = match (scenario, params) {
                (Some(name), _) => Some(ScenarioParams::named(name)?),
                (None, Some(p)) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    Some(ScenarioParams::from_json(&text)?)
                }
                (None, None) => None,
            };
            let text = match params {
                Some(p) => {
                    let report = scenario_report(&p)?;
                    if *json {
                        serde_json::to_string_pretty(&report)?
                    } else {
                        let mut s = format!("{}: {}", report.scenario, report.summary());
                        for n in &report.notes {
                            s.push_str(&format!("\n  note [{}] {}", n.code, n.message));
                        }
                        s
                    }
                }
                None => {
                    let c = comparison()?;
                    if *json {
                        serde_json::to_string_pretty(&c)?
                    } else {
                        render_comparison(&c)
                    }
                }
            };
            emit(&text, out.as_deref())?;
        }
        Command::Queue {
            action: QueueAction::Ls { status },
        } => {
            let engine = ws()?.engine()?;
            say(&serde_json::to_string_pretty(
                &engine.store().queue(*status),
            )?)?;
        }
        Command::Fixtures { dir, seed } => {
            let corpus = generate(*seed);
            corpus.write(dir)?;
            let scripts = std::fs::canonicalize(dir.join("scripts"))?;
            let config = PipelineConfig {
                backends: vec![BackendConfig {
                    backend_id: CORPUS_BACKEND.to_string(),
                    kind: BackendKind::Scripted,
                    endpoint: None,
                    timeout_ms: 30_000,
                    fixtures_dir: Some(scripts),
                    unscripted: Unscripted::ReadDocument,
                }],
                ..PipelineConfig::default()
            };
            std::fs::write(
                dir.join("config.json"),
                serde_json::to_string_pretty(&config)?,
            )?;
            say(&format!(
                "wrote {} bundles, {} labeled documents and config.json to {}",
                corpus.bundles.len(),
                corpus.truths.len(),
                dir.display()
            ))?;
        }
    }
    Ok(())
}
