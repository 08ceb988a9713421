//! The `parley` command line.
//!
//! Exit status is 0 on success, 2 when a file or socket operation failed, and
//! 1 for every other error (bad flags, schema violations, invalid input).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use parley_core::corpus::{
    anonymize, compute_stats, read_json, render_stats_table, split_corpus, to_pretty_json, Corpus, CorpusError,
    NamePool, SplitStrategy,
};
use parley_core::metrics::{evaluate_corpus, iaa, render_table, Predictions};
use parley_core::ontology::{Ontology, OntologyError, SamplingConfig};
use parley_core::prompt::{sample_scenario, ScenarioConfig};
use parley_core::state_change::{build_state_change_examples, to_jsonl, ScConfig, WindowUnit};
use parley_lm::{AuditLog, LanguageModel, LmClient, LmError, MockBackend, MockScript, RemoteBackend};
use parley_session::demo::{build_demo_corpus, noisy_predictions, plan_dialogue, plan_script};
use parley_session::{Orchestrator, SessionStore, StoreError};

use crate::api::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "parley", version, about = "Review sessions, corpus tools and dialogue state scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against a gold corpus.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Inter-annotator agreement over multiply annotated dialogues.
    Iaa {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Partition a corpus into train, val and test directories.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// Three comma-separated fractions summing to 1.
        #[arg(long)]
        ratios: String,
        /// `random` or `by_slot_count`.
        #[arg(long, default_value = "random")]
        strategy: SplitStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace personal names with names from a pool.
    Anonymize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Name pool JSON; the built-in pool when absent.
        #[arg(long)]
        names: Option<PathBuf>,
    },
    /// Sample a generation scenario.
    SampleScenario {
        /// Ontology JSON; the built-in sample ontology when absent.
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of triplets.
        #[arg(long, default_value_t = 5)]
        count: usize,
        /// Placeholder value pools for free-form slots.
        #[arg(long)]
        sampling: Option<PathBuf>,
    },
    /// Write state-change training records as JSON lines.
    BuildScExamples {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 18)]
        k: usize,
        /// Count the recency window in exchanges instead of turns.
        #[arg(long)]
        exchanges: bool,
        /// Leave out unchanged triplets.
        #[arg(long)]
        no_same: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        store: PathBuf,
        /// `mock:SCRIPT` or `remote` (configured from the environment).
        #[arg(long)]
        backend: String,
        /// Directory of corpora served for statistics.
        #[arg(long)]
        corpora: Option<PathBuf>,
        /// Ontology JSON; the built-in sample ontology when absent.
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Append every completion to this JSON-lines audit log.
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        lm_concurrency: usize,
    },
    /// Build a corpus by driving scripted sessions against the mock backend.
    DemoCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write simulated tracker predictions here.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        noise_seed: u64,
    },
    /// Write a mock script and matching scenario for one scripted dialogue.
    DemoScript {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
}

/// Parse `args` and run the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 if any cause is an I/O failure, otherwise 1.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let io = e.chain().any(|c| {
        c.is::<std::io::Error>()
            || c.downcast_ref::<CorpusError>().is_some_and(CorpusError::is_io)
            || matches!(c.downcast_ref::<StoreError>(), Some(StoreError::Io { .. }))
            || matches!(c.downcast_ref::<LmError>(), Some(LmError::Io { .. }))
            || matches!(c.downcast_ref::<OntologyError>(), Some(OntologyError::Io { .. }))
    });
    if io {
        2
    } else {
        1
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).context("cannot write to stdout")?;
    out.flush().context("cannot write to stdout")
}

fn load_ontology(path: Option<&Path>) -> Result<Ontology> {
    match path {
        Some(p) => Ok(Ontology::load(p)?),
        None => Ok(Ontology::sample()),
    }
}

/// The explicit ontology, else the corpus's own, else the sample ontology.
fn corpus_ontology(corpus: &Corpus, path: Option<&Path>) -> Result<Ontology> {
    match path {
        Some(p) => Ok(Ontology::load(p)?),
        None => Ok(corpus.load_ontology()?.unwrap_or_else(Ontology::sample)),
    }
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("ratio {p:?} is not a number")))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        &[a, b, c] => Ok([a, b, c]),
        _ => bail!("expected three comma-separated ratios, got {s:?}"),
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Evaluate {
            gold,
            pred,
            report,
            ontology,
        } => {
            let corpus = Corpus::load(&gold)?;
            let ontology = corpus_ontology(&corpus, ontology.as_deref())?;
            corpus.validate(&ontology)?;
            let predictions: Predictions = read_json(&pred)?;
            let scores = evaluate_corpus(&corpus.documents, &predictions, &ontology)?;
            if let Some(path) = report {
                write_file(&path, &to_pretty_json(&scores))?;
            }
            print(&render_table(&scores))
        }
        Command::Iaa { corpus, seed, ontology } => {
            let corpus = Corpus::load(&corpus)?;
            let ontology = corpus_ontology(&corpus, ontology.as_deref())?;
            let report = iaa(&corpus.documents, seed, &ontology)?;
            print(&to_pretty_json(&report))
        }
        Command::Stats { corpus, json } => {
            let stats = compute_stats(&Corpus::load(&corpus)?);
            if json {
                print(&to_pretty_json(&stats))
            } else {
                print(&render_stats_table(&stats))
            }
        }
        Command::Split {
            corpus,
            ratios,
            strategy,
            seed,
            out,
        } => {
            let ratios = parse_ratios(&ratios)?;
            let corpus = Corpus::load(&corpus)?;
            let ontology = corpus.load_ontology()?;
            let parts = split_corpus(&corpus, ratios, strategy, seed)?;
            let mut summary = String::new();
            for (name, part) in ["train", "val", "test"].iter().zip(&parts) {
                part.save(out.join(name), ontology.as_ref())?;
                summary.push_str(&format!("{name}\t{}\n", part.len()));
            }
            print(&summary)
        }
        Command::Anonymize {
            corpus,
            seed,
            out,
            names,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let ontology = corpus.load_ontology()?;
            let pool: NamePool = match names {
                Some(p) => read_json(&p)?,
                None => NamePool::default(),
            };
            let documents = corpus
                .documents
                .iter()
                .map(|d| anonymize(d, &pool, seed).with_context(|| format!("dialogue {:?}", d.id)))
                .collect::<Result<Vec<_>>>()?;
            let anonymized = Corpus {
                provenance: format!("{} / anonymized (seed {seed})", corpus.provenance),
                ontology: None,
                documents,
            };
            anonymized.save(&out, ontology.as_ref())?;
            print(&format!("{} documents\n", anonymized.len()))
        }
        Command::SampleScenario {
            ontology,
            seed,
            count,
            sampling,
        } => {
            let ontology = load_ontology(ontology.as_deref())?;
            let sampling = match sampling {
                Some(p) => read_json(&p)?,
                None => SamplingConfig::default(),
            };
            let spec = sample_scenario(&ontology, &ScenarioConfig::default(), &sampling, seed, count)?;
            print(&to_pretty_json(&spec))
        }
        Command::BuildScExamples {
            corpus,
            k,
            exchanges,
            no_same,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let config = ScConfig {
                k,
                unit: if exchanges { WindowUnit::Exchanges } else { WindowUnit::Turns },
                emit_same: !no_same,
            };
            let mut records = Vec::new();
            for d in &corpus.documents {
                records.extend(build_state_change_examples(d, &config).with_context(|| format!("dialogue {:?}", d.id))?);
            }
            write_file(&out, &to_jsonl(&records))?;
            print(&format!("{} records\n", records.len()))
        }
        Command::Serve {
            port,
            host,
            store,
            backend,
            corpora,
            ontology,
            audit,
            lm_concurrency,
        } => {
            let ontology = Arc::new(load_ontology(ontology.as_deref())?);
            let backend: Arc<dyn LanguageModel> = match backend.split_once(':') {
                Some(("mock", path)) => Arc::new(MockBackend::new(MockScript::load(path)?)?),
                None if backend == "remote" => Arc::new(RemoteBackend::from_env()?),
                _ => bail!("unknown backend {backend:?} (expected mock:SCRIPT or remote)"),
            };
            let mut lm = LmClient::new(backend);
            if let Some(path) = audit {
                lm = lm.with_audit(AuditLog::open(path)?);
            }
            let store = SessionStore::open(&store)?;
            let state = Arc::new(AppState::new(store, Orchestrator::new(ontology, lm), corpora, lm_concurrency));
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .context("cannot start the async runtime")?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .with_context(|| format!("cannot listen on {host}:{port}"))?;
                let addr = listener.local_addr().context("cannot read the bound address")?;
                print(&format!("listening on http://{addr}\n"))?;
                tracing::info!(%addr, "serving");
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                    tracing::info!("shutting down");
                };
                serve(listener, state, shutdown).await.context("server failed")
            })
        }
        Command::DemoCorpus {
            out,
            count,
            seed,
            predictions,
            noise_seed,
        } => {
            let ontology = Arc::new(Ontology::sample());
            let docs = build_demo_corpus(ontology.clone(), count, seed)?;
            if let Some(path) = predictions {
                write_file(&path, &to_pretty_json(&noisy_predictions(&docs, &ontology, noise_seed)))?;
            }
            let corpus = Corpus::new(format!("scripted mock sessions (seed {seed})"), docs);
            corpus.save(&out, Some(&ontology))?;
            print(&format!("{} documents\n", corpus.len()))
        }
        Command::DemoScript { seed, script, scenario } => {
            let plan = plan_dialogue(&format!("demo-{seed}"), &Ontology::sample(), seed)?;
            write_file(&script, &to_pretty_json(&MockScript::positional(plan_script(&plan))))?;
            write_file(&scenario, &to_pretty_json(&plan.scenario))?;
            print(&format!("{} subdialogues\n", plan.subdialogues.len()))
        }
    }
}
