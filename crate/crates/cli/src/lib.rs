//! Command-line front end and review service for the hadith corpus
//! pipeline.
//!
//! Exit codes:
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success                                             |
//! | 2    | usage error (bad flags or arguments)                |
//! | 3    | configuration error (unreadable, unknown key, invalid value) |
//! | 4    | I/O error (missing or unreadable input file)        |
//! | 5    | a pipeline stage failed                             |
//! | 6    | validation error (bad data or out-of-range request) |

pub mod service;

use std::collections::HashMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hadith_corpus::economics::{build_valuation_table, parse_tasks, render_table, EffortModel};
use hadith_corpus::enrich::Layer;
use hadith_corpus::evaluate::{build_report, draw_sample, render_csv, render_text, ReportFormat};
use hadith_corpus::model::{Narration, NarrationId};
use hadith_corpus::pipeline::{
    failure, run_pipeline, run_stage, ClientKind, ConfigError, PipelineConfig, RunSummary, SegmenterKind, Stage,
    StageError, StageToggles, StoreName,
};
use hadith_corpus::similarity::{nearest, HashingEmbedder, SimilarityItem};
use hadith_corpus::store::{RecordStore, StoreError};

use crate::service::ServiceState;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("run incomplete: {0}")]
    Partial(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Stage(_) | CliError::Partial(_) => 5,
            CliError::Validation(_) => 6,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { path, source } => CliError::Io { path, source },
            StoreError::Missing { path } => {
                CliError::Io { path, source: std::io::Error::from(std::io::ErrorKind::NotFound) }
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hadith-corpus", version, about = "Build, enrich and evaluate a multilingual hadith corpus")]
pub struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "pipeline.toml", env = "CORPUS_CONFIG")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SegmenterArg {
    Rule,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClientArg {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load source books into the books store.
    Ingest {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// CSV listing of source files (path,category,book_id,title).
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split hadith books into narrations.
    Segment {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        backend: Option<SegmenterArg>,
        #[arg(long)]
        window_units: Option<usize>,
        #[arg(long)]
        overlap_units: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map narrations back to their source spans.
    Align {
        #[arg(long)]
        narrations: Option<PathBuf>,
        #[arg(long)]
        books: Option<PathBuf>,
        #[arg(long)]
        min_fidelity: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add translations, diacritics, summaries, key points and tags.
    Enrich {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<Layer>>,
        #[arg(long, value_delimiter = ',')]
        languages: Option<Vec<String>>,
        #[arg(long)]
        client: Option<ClientArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign group ids to near-identical narrations.
    Group {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the narrations most similar to one narration.
    Similar {
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 5)]
        top: usize,
        /// Narration store; defaults to the grouped store.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Expert evaluation tools.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Value each task in equivalent expert person-hours.
    Value {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        q0: f64,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        /// Use the unrounded effort ratio instead of three decimals.
        #[arg(long)]
        exact_ratio: bool,
    },
    /// Serve the review API (and optionally the review UI).
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Run every enabled stage in order.
    Run,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Draw the review sample and print its narration ids.
    Sample(SampleArgs),
    /// Aggregate evaluation records into a report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Narration store; defaults to the grouped store.
    #[arg(long = "in")]
    input: Option<PathBuf>,
}

fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    Ok(PipelineConfig::load(path)?)
}

/// Overrides apply relative to the working directory, unlike paths in the
/// config file.
fn absolute(p: PathBuf) -> Result<PathBuf, CliError> {
    std::path::absolute(&p).map_err(|e| CliError::io(&p, e))
}

fn set(slot: &mut Option<PathBuf>, value: Option<PathBuf>) -> Result<(), CliError> {
    if let Some(v) = value {
        *slot = Some(absolute(v)?);
    }
    Ok(())
}

fn revalidate(cfg: PipelineConfig) -> Result<PipelineConfig, CliError> {
    use hadith_corpus::model::Validate;
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

fn stage_config(cfg: &mut PipelineConfig, command: Command) -> Result<Stage, CliError> {
    let p = &mut cfg.paths;
    let stage = match command {
        Command::Ingest { manifest, sources, out } => {
            if let Some(m) = manifest {
                p.manifest = absolute(m)?;
            }
            if let Some(s) = sources {
                p.sources = absolute(s)?;
            }
            set(&mut p.books, out)?;
            Stage::Ingest
        }
        Command::Segment { input, backend, window_units, overlap_units, out } => {
            set(&mut p.books, input)?;
            set(&mut p.segmented, out)?;
            if let Some(b) = backend {
                cfg.backends.segmenter = match b {
                    SegmenterArg::Rule => SegmenterKind::Rule,
                    SegmenterArg::Remote => SegmenterKind::Annotator,
                };
            }
            if let Some(w) = window_units {
                cfg.segment.window_units = w;
            }
            if let Some(k) = overlap_units {
                cfg.segment.overlap_units = k;
            }
            Stage::Segment
        }
        Command::Align { narrations, books, min_fidelity, out } => {
            set(&mut p.segmented, narrations)?;
            set(&mut p.books, books)?;
            set(&mut p.aligned, out)?;
            if let Some(f) = min_fidelity {
                cfg.align.min_fidelity = f;
            }
            Stage::Align
        }
        Command::Enrich { input, layers, languages, client, out } => {
            set(&mut p.aligned, input)?;
            set(&mut p.bundles, out)?;
            if let Some(l) = layers {
                cfg.enrich.layers = l;
            }
            if let Some(l) = languages {
                cfg.enrich.languages = l;
            }
            if let Some(c) = client {
                cfg.backends.annotator = match c {
                    ClientArg::Mock => ClientKind::Mock,
                    ClientArg::Remote => ClientKind::Remote,
                };
            }
            Stage::Enrich
        }
        Command::Group { input, threshold, out } => {
            set(&mut p.aligned, input)?;
            set(&mut p.grouped, out)?;
            if let Some(t) = threshold {
                cfg.group.threshold = t;
            }
            Stage::Group
        }
        other => unreachable!("not a stage command: {other:?}"),
    };
    Ok(stage)
}

fn hadith_narrations(path: &Path) -> Result<Vec<Narration>, CliError> {
    let store = RecordStore::open_existing(path)?;
    Ok(store.narrations()?.into_iter().filter(Narration::is_hadith).collect())
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn similar(cfg: &PipelineConfig, id: &str, top: usize, input: Option<PathBuf>) -> Result<String, CliError> {
    let path = input.unwrap_or_else(|| cfg.store_path(StoreName::Grouped));
    let narrations = hadith_narrations(&path)?;
    let bundles = cfg.store_path(StoreName::Bundles);
    let tags: HashMap<NarrationId, Vec<String>> = if bundles.exists() {
        RecordStore::open_existing(&bundles)?
            .bundles()?
            .into_iter()
            .filter_map(|b| b.tags.map(|t| (b.narration_id, t)))
            .collect()
    } else {
        HashMap::new()
    };
    let embedder = HashingEmbedder::default();
    let items: Vec<SimilarityItem> = narrations
        .iter()
        .map(|n| SimilarityItem {
            id: n.narration_id.clone(),
            text: n.text.clone(),
            tags: tags.get(&n.narration_id).cloned().unwrap_or_default(),
            vector: embedder.embed(&n.text),
        })
        .collect();
    let target = items
        .iter()
        .find(|i| i.id.as_str() == id)
        .ok_or_else(|| CliError::Validation(format!("narration `{id}` not found in {}", path.display())))?;
    let edges = nearest(target, &items, top).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut text = format!("{:<4} {:<28} {:>8} {:>8} {:>8}\n", "rank", "narration", "lexical", "semantic", "thematic");
    for (rank, e) in edges.iter().enumerate() {
        let other = if e.id_a == target.id { &e.id_b } else { &e.id_a };
        text += &format!(
            "{:<4} {:<28} {:>8.3} {:>8.3} {:>8.3}\n",
            rank + 1,
            other.as_str(),
            e.lexical,
            e.semantic,
            e.thematic
        );
    }
    Ok(text)
}

fn eval_report(input: &Path, compare: Option<&Path>, format: FormatArg) -> Result<String, CliError> {
    let load = |p: &Path| -> Result<_, CliError> {
        if !p.exists() {
            return Err(CliError::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        Ok(build_report(&RecordStore::open_existing(p)?.evaluations()?))
    };
    let report = load(input)?;
    let comparison = compare.map(load).transpose()?;
    let format = match format {
        FormatArg::Text => ReportFormat::Text,
        FormatArg::Csv => ReportFormat::Csv,
    };
    Ok(match format {
        ReportFormat::Text => render_text(&report, comparison.as_ref()),
        ReportFormat::Csv => render_csv(&report, comparison.as_ref()),
    })
}

fn value(tasks: &Path, q0: f64, epsilon: f64, exact: bool) -> Result<String, CliError> {
    let text = std::fs::read_to_string(tasks).map_err(|e| CliError::io(tasks, e))?;
    let tasks = parse_tasks(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let model = EffortModel::new(q0, epsilon).map_err(|e| CliError::Validation(e.to_string()))?;
    let table = build_valuation_table(&tasks, &model, if exact { None } else { Some(3) })
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(render_table(&table, &model))
}

fn serve(cfg: &PipelineConfig, bind: SocketAddr, ui_dir: Option<PathBuf>) -> Result<(), CliError> {
    let eval_path = cfg.store_path(StoreName::Evaluations);
    if let Some(dir) = eval_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let state = ServiceState::new(
        RecordStore::open(&eval_path)?,
        Some(cfg.store_path(StoreName::Grouped)),
        Some(cfg.store_path(StoreName::Bundles)),
        cfg.sample.size,
        cfg.seed,
    )?;
    tracing::info!(sample = state.sample().len(), store = %eval_path.display(), "review sample ready");
    let mut app = service::router(Arc::new(state));
    if let Some(dir) = ui_dir {
        app = app.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io(Path::new("<runtime>"), e))?;
    runtime.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(bind).await.map_err(|e| CliError::io(Path::new(&bind.to_string()), e))?;
        tracing::info!(%bind, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::io(Path::new(&bind.to_string()), e))
    })
}

fn run_summary(summary: &RunSummary) -> Result<(), CliError> {
    match failure(summary) {
        Some(r) => Err(CliError::Partial(r.error.clone().unwrap_or_else(|| format!("{} stage failed", r.stage)))),
        None => Ok(()),
    }
}

/// Executes a parsed command, writing its normal output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Value { tasks, q0, epsilon, exact_ratio } => write_out(out, &value(&tasks, q0, epsilon, exact_ratio)?),
        Command::Eval(EvalCommand::Report { input, compare, format }) => {
            write_out(out, &eval_report(&input, compare.as_deref(), format)?)
        }
        Command::Eval(EvalCommand::Sample(args)) => {
            let cfg = load_config(&cli.config)?;
            let path = args.input.unwrap_or_else(|| cfg.store_path(StoreName::Grouped));
            let ids: Vec<NarrationId> = hadith_narrations(&path)?.into_iter().map(|n| n.narration_id).collect();
            let n = args.n.unwrap_or(cfg.sample.size);
            let sample = draw_sample(&ids, n, args.seed.unwrap_or(cfg.seed)).map_err(|e| {
                CliError::Validation(format!("sample of {} requested from {} narrations", e.requested, e.available))
            })?;
            let text: String = sample.iter().map(|id| format!("{id}\n")).collect();
            write_out(out, &text)
        }
        Command::Similar { id, top, input } => {
            let cfg = load_config(&cli.config)?;
            write_out(out, &similar(&cfg, &id, top, input)?)
        }
        Command::Serve { bind, ui_dir } => serve(&load_config(&cli.config)?, bind, ui_dir),
        Command::Run => {
            let cfg = load_config(&cli.config)?;
            let summary = run_pipeline(&cfg);
            write_out(out, &format!("{summary}\n"))?;
            run_summary(&summary)
        }
        stage_command => {
            let mut cfg = load_config(&cli.config)?;
            let stage = stage_config(&mut cfg, stage_command)?;
            cfg.stages = StageToggles::only(stage);
            let cfg = revalidate(cfg)?;
            let report = run_stage(&cfg, stage, &cfg.annotator())?;
            let summary = RunSummary { stages: vec![report], partial: false };
            write_out(out, &format!("{summary}\n"))
        }
    }
}
