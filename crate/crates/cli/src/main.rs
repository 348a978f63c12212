use audit_core::analysis::{AnalysisConfig, DEFAULT_ENTROPY_THRESHOLD, DEFAULT_TAU};
use audit_core::parser::strictness_report;
use audit_core::prompt::{render_prompt, PromptSpec};
use audit_core::query::{execute_query, ScenarioContext, ScenarioQuery};
use audit_core::report::REPORT_FILE;
use audit_core::synth::{synthesize, SynthSpec};
use audit_core::window::{build_window, promote_hits, Anchor, DEFAULT_POST_S, DEFAULT_PRE_S};
use audit_core::workspace::{RunRequest, RunState, Workspace, WorkspaceError};
use audit_core::{ModelSpec, SceneStore};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "audit",
    version,
    about = "Scenario-window audits of LLM driving-risk interpretation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest JSONL scene-state files into a store directory.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        store: PathBuf,
    },
    /// Generate a synthetic JSONL store from a seed and a spec file.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a scenario query and print the resulting context.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Promote query hits to non-overlapping anchors.
    Anchors {
        #[arg(long)]
        store: PathBuf,
        /// Context written by `audit query`.
        #[arg(long)]
        context: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PRE_S)]
        k: i64,
        #[arg(long, default_value_t = DEFAULT_POST_S)]
        m: i64,
        #[arg(long, default_value_t = 16)]
        limit: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build windows around anchors and add them to a collection.
    Window {
        #[arg(long)]
        store: PathBuf,
        /// JSON array of anchors.
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PRE_S)]
        k: i64,
        #[arg(long, default_value_t = DEFAULT_POST_S)]
        m: i64,
        #[arg(long)]
        collection: String,
    },
    /// Render the exact prompt for one window.
    Prompt {
        #[arg(long, default_value = ".")]
        store: PathBuf,
        #[arg(long)]
        window: String,
        #[arg(long, default_value = "fixed_standard")]
        spec: String,
        /// Print the prompt text (the default output).
        #[arg(long)]
        print: bool,
        /// Print the rendered prompt as JSON, including its hash.
        #[arg(long, conflicts_with = "print")]
        json: bool,
    },
    /// Evaluate every window of a collection with every model.
    Run {
        #[arg(long, default_value = ".")]
        store: PathBuf,
        #[arg(long)]
        collection: String,
        /// JSON array of model specs.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "fixed_standard")]
        prompt: String,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        run_id: Option<String>,
        /// Shuffle dispatch order; records are unaffected.
        #[arg(long)]
        shuffle_seed: Option<u64>,
    },
    /// Re-parse a run's records and print per-model strictness counts.
    Parse {
        #[arg(long, default_value = ".")]
        store: PathBuf,
        #[arg(long)]
        run: String,
    },
    /// Write report.json and the CSV tables for a run.
    Report {
        #[arg(long, default_value = ".")]
        store: PathBuf,
        #[arg(long)]
        run: String,
        /// Report path; CSV tables go beside it. Prints to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: u8,
        #[arg(long, default_value_t = DEFAULT_ENTROPY_THRESHOLD)]
        entropy_threshold: f64,
    },
    /// Serve the store over HTTP.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Ingest(#[from] audit_core::store::IngestError),
    #[error(transparent)]
    Synth(#[from] audit_core::synth::SynthError),
    #[error(transparent)]
    Query(#[from] audit_core::query::QueryError),
    #[error(transparent)]
    Window(#[from] audit_core::window::WindowError),
    #[error(transparent)]
    Template(#[from] audit_core::prompt::TemplateError),
    #[error(transparent)]
    Report(#[from] audit_core::report::ReportError),
    #[error(transparent)]
    Service(#[from] audit_service::ServiceError),
    #[error("window `{0}` is not in any collection")]
    UnknownWindow(String),
    #[error("run `{run_id}` ended {state:?}: {message}")]
    RunFailed {
        run_id: String,
        state: RunState,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(io_err(path)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { files, store } => {
            let mut scenes = if store.join(audit_core::store::STATES_FILE).is_file() {
                SceneStore::open(&store)?
            } else {
                SceneStore::new()
            };
            for file in &files {
                let reader = BufReader::new(fs::File::open(file).map_err(io_err(file))?);
                scenes.ingest_source(&file.display().to_string(), reader)?;
            }
            Workspace::init(&store, &scenes)?;
            for a in scenes.acquisitions() {
                println!(
                    "{}\t{} states\t[{}, {}]",
                    a.acquisition_id, a.states, a.t_min, a.t_max
                );
            }
            Ok(())
        }
        Command::Synth { seed, spec, out } => {
            let spec: SynthSpec = read_json(&spec)?;
            emit(Some(&out), &synthesize(seed, &spec)?)
        }
        Command::Query { store, query, out } => {
            let scenes = Workspace::open(store)?.load_store()?;
            let query: ScenarioQuery = read_json(&query)?;
            emit(out.as_deref(), &pretty(&execute_query(&scenes, &query)?))
        }
        Command::Anchors {
            store,
            context,
            k,
            m,
            limit,
            out,
        } => {
            let scenes = Workspace::open(store)?.load_store()?;
            let context: ScenarioContext = read_json(&context)?;
            emit(
                out.as_deref(),
                &pretty(&promote_hits(&context, &scenes, k, m, limit)?),
            )
        }
        Command::Window {
            store,
            anchors,
            k,
            m,
            collection,
        } => {
            let ws = Workspace::open(store)?;
            let scenes = ws.load_store()?;
            let anchors: Vec<Anchor> = read_json(&anchors)?;
            let mut c = ws.load_or_create_collection(&collection)?;
            for a in &anchors {
                let w = build_window(&scenes, a, k, m)?;
                println!(
                    "{}\t{}\t{}/{} states",
                    w.window_id,
                    a.label.as_deref().unwrap_or("-"),
                    w.states.len(),
                    w.span_seconds()
                );
                c.push_window(w);
            }
            ws.save_collection(&c)?;
            println!(
                "collection {}: {} windows",
                c.collection_id,
                c.window_ids.len()
            );
            Ok(())
        }
        Command::Prompt {
            store,
            window,
            spec,
            print: _,
            json,
        } => {
            let ws = Workspace::open(store)?;
            let spec = PromptSpec::resolve(&spec)?;
            let found = ws
                .list_collections()?
                .iter()
                .map(|id| ws.load_collection(id))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .find_map(|c| c.window(&window).cloned())
                .ok_or(CliError::UnknownWindow(window))?;
            let rendered = render_prompt(&found, &spec)?;
            if json {
                emit(None, &pretty(&rendered))
            } else {
                emit(None, &rendered.text)
            }
        }
        Command::Run {
            store,
            collection,
            models,
            prompt,
            parallel,
            run_id,
            shuffle_seed,
        } => {
            let ws = Workspace::open(store)?;
            let models: Vec<ModelSpec> = read_json(&models)?;
            let request = RunRequest {
                collection_id: collection,
                models,
                prompt,
                parallel,
                run_id,
                shuffle_seed,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
            let status = runtime.block_on(ws.run(&request))?;
            if status.state != RunState::Complete {
                return Err(CliError::RunFailed {
                    run_id: status.run_id,
                    state: status.state,
                    message: status.error.unwrap_or_default(),
                });
            }
            println!("{}", status.run_id);
            for (s, n) in &status.records {
                eprintln!("{s:?}\t{n}");
            }
            Ok(())
        }
        Command::Parse { store, run } => {
            let ws = Workspace::open(store)?;
            let parsed = ws.parse_run(&run)?;
            eprintln!(
                "{} accepted, {} rejected",
                parsed.assessments.len(),
                parsed.rejections.len()
            );
            emit(None, &pretty(&strictness_report(&ws.load_records(&run)?)))
        }
        Command::Report {
            store,
            run,
            out,
            tau,
            entropy_threshold,
        } => {
            let ws = Workspace::open(store)?;
            let report = ws.report(
                &run,
                &AnalysisConfig {
                    tau,
                    entropy_threshold,
                },
            )?;
            let Some(out) = out else {
                return emit(None, &report.to_json());
            };
            let dir = out
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            emit(Some(&out), &report.to_json())?;
            for (name, body) in report.csv_tables()? {
                let path = dir.join(name);
                fs::write(&path, body).map_err(io_err(&path))?;
            }
            if out.file_name().is_some_and(|n| n != REPORT_FILE) {
                eprintln!("note: CSV tables written to {}", dir.display());
            }
            Ok(())
        }
        Command::Serve { store, bind } => {
            let runtime = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
            Ok(runtime.block_on(audit_service::serve(store, &bind))?)
        }
    }
}
