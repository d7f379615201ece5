//! End-to-end pipeline: ingest, segment, align, enrich, group.
//!
//! Every stage reads the store written by the stage before it and appends
//! only new or changed records to its own store, so reruns are cheap and an
//! interrupted run resumes where it stopped.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{align_narration, AlignConfig, BookIndex};
use crate::enrich::{
    enrich_all, Annotator, AnnotatorClient, AnnotatorClientConfig, Clock, EnrichConfig, Layer, ManualClock,
    MockAnnotator, RemoteAnnotator, SystemClock,
};
use crate::ingest::{load_book, load_source_listing, IngestError, ReclassificationTable};
use crate::model::{
    ensure, BookId, Category, CorpusManifest, EnrichmentBundle, InvariantViolation, ManifestError, Narration,
    NarrationId, QcFlag, SourceBook, Validate,
};
use crate::segment::{segment_book, AnnotatorSegmenter, RuleBackend, SegmentConfig, SegmenterBackend};
use crate::similarity::group_identical;
use crate::store::{Checkpoint, Record, RecordKind, RecordStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Segment,
    Align,
    Enrich,
    Group,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Ingest, Stage::Segment, Stage::Align, Stage::Enrich, Stage::Group];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Align => "align",
            Stage::Enrich => "enrich",
            Stage::Group => "group",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    #[default]
    Rule,
    #[serde(alias = "remote")]
    Annotator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// CSV listing of source books.
    pub sources: PathBuf,
    pub reclassify: Option<PathBuf>,
    pub manifest: PathBuf,
    /// Directory holding every store not given an explicit path.
    pub store_dir: PathBuf,
    pub books: Option<PathBuf>,
    pub segmented: Option<PathBuf>,
    pub aligned: Option<PathBuf>,
    pub bundles: Option<PathBuf>,
    pub grouped: Option<PathBuf>,
    pub evaluations: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            sources: "sources.csv".into(),
            reclassify: None,
            manifest: "manifest.toml".into(),
            store_dir: "store".into(),
            books: None,
            segmented: None,
            aligned: None,
            bundles: None,
            grouped: None,
            evaluations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    pub ingest: bool,
    pub segment: bool,
    pub align: bool,
    pub enrich: bool,
    pub group: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { ingest: true, segment: true, align: true, enrich: true, group: true }
    }
}

impl StageToggles {
    pub fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Ingest => self.ingest,
            Stage::Segment => self.segment,
            Stage::Align => self.align,
            Stage::Enrich => self.enrich,
            Stage::Group => self.group,
        }
    }

    pub fn only(stage: Stage) -> Self {
        let mut t = Self { ingest: false, segment: false, align: false, enrich: false, group: false };
        match stage {
            Stage::Ingest => t.ingest = true,
            Stage::Segment => t.segment = true,
            Stage::Align => t.align = true,
            Stage::Enrich => t.enrich = true,
            Stage::Group => t.group = true,
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendsConfig {
    pub segmenter: SegmenterKind,
    pub annotator: ClientKind,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self { segmenter: SegmenterKind::Rule, annotator: ClientKind::Mock }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnrichLayers {
    pub layers: Vec<Layer>,
    /// Target languages; empty means the manifest's list.
    pub languages: Vec<String>,
}

impl Default for EnrichLayers {
    fn default() -> Self {
        Self { layers: EnrichConfig::default().layers, languages: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupConfig {
    /// Lexical similarity at or above which two texts count as identical.
    pub threshold: f64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self { threshold: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub size: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { size: 1213 }
    }
}

/// Everything a run needs. Relative paths resolve against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub stages: StageToggles,
    pub backends: BackendsConfig,
    pub segment: SegmentConfig,
    pub align: AlignConfig,
    pub enrich: EnrichLayers,
    pub client: AnnotatorClientConfig,
    pub group: GroupConfig,
    pub sample: SampleConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            stages: StageToggles::default(),
            backends: BackendsConfig::default(),
            segment: SegmentConfig::default(),
            align: AlignConfig::default(),
            enrich: EnrichLayers::default(),
            client: AnnotatorClientConfig::default(),
            group: GroupConfig::default(),
            sample: SampleConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(#[from] InvariantViolation),
}

/// Environment variables that override store locations and the annotator
/// endpoint.
pub const ENV_STORE_DIR: &str = "CORPUS_STORE_DIR";
pub const ENV_ANNOTATOR_ENDPOINT: &str = "CORPUS_ANNOTATOR_ENDPOINT";
pub const ENV_STORES: [(&str, StoreName); 6] = [
    ("CORPUS_BOOKS_STORE", StoreName::Books),
    ("CORPUS_SEGMENTED_STORE", StoreName::Segmented),
    ("CORPUS_ALIGNED_STORE", StoreName::Aligned),
    ("CORPUS_BUNDLES_STORE", StoreName::Bundles),
    ("CORPUS_GROUPED_STORE", StoreName::Grouped),
    ("CORPUS_EVALUATIONS_STORE", StoreName::Evaluations),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreName {
    Books,
    Segmented,
    Aligned,
    Bundles,
    Grouped,
    Evaluations,
}

impl StoreName {
    fn file_name(self) -> &'static str {
        match self {
            StoreName::Books => "books.jsonl",
            StoreName::Segmented => "segmented.jsonl",
            StoreName::Aligned => "aligned.jsonl",
            StoreName::Bundles => "bundles.jsonl",
            StoreName::Grouped => "grouped.jsonl",
            StoreName::Evaluations => "evaluations.jsonl",
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: base_dir.to_path_buf(), message: e.message().to_string() })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.message().to_string() })?;
        cfg.base_dir = base;
        cfg.apply_env(env);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        if let Some(dir) = env(ENV_STORE_DIR) {
            self.paths.store_dir = dir.into();
        }
        for (var, name) in ENV_STORES {
            if let Some(p) = env(var) {
                *self.store_override(name) = Some(p.into());
            }
        }
        if let Some(endpoint) = env(ENV_ANNOTATOR_ENDPOINT) {
            self.client.endpoint = endpoint;
        }
    }

    fn store_override(&mut self, name: StoreName) -> &mut Option<PathBuf> {
        let p = &mut self.paths;
        match name {
            StoreName::Books => &mut p.books,
            StoreName::Segmented => &mut p.segmented,
            StoreName::Aligned => &mut p.aligned,
            StoreName::Bundles => &mut p.bundles,
            StoreName::Grouped => &mut p.grouped,
            StoreName::Evaluations => &mut p.evaluations,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn store_path(&self, name: StoreName) -> PathBuf {
        let explicit = match name {
            StoreName::Books => &self.paths.books,
            StoreName::Segmented => &self.paths.segmented,
            StoreName::Aligned => &self.paths.aligned,
            StoreName::Bundles => &self.paths.bundles,
            StoreName::Grouped => &self.paths.grouped,
            StoreName::Evaluations => &self.paths.evaluations,
        };
        match explicit {
            Some(p) => self.resolve(p),
            None => self.resolve(&self.paths.store_dir).join(name.file_name()),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.paths.manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The annotator the config selects. The mock runs on a virtual clock,
    /// which keeps its output byte-identical across runs.
    pub fn annotator(&self) -> Annotator {
        match self.backends.annotator {
            ClientKind::Mock => {
                let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(0));
                Annotator::new(Arc::new(MockAnnotator), self.client.clone(), clock)
            }
            ClientKind::Remote => {
                let client: Arc<dyn AnnotatorClient> = Arc::new(RemoteAnnotator::new(&self.client));
                Annotator::new(client, self.client.clone(), Arc::new(SystemClock::default()))
            }
        }
    }
}

impl Validate for PipelineConfig {
    fn validate(&self) -> Result<(), InvariantViolation> {
        let s = &self.segment;
        ensure(s.window_units >= 1, "window_units >= 1", || "window_units = 0".into())?;
        ensure(s.overlap_units < s.window_units, "overlap_units < window_units", || {
            format!("overlap {} with window {}", s.overlap_units, s.window_units)
        })?;
        ensure(s.max_unit_chars >= 1, "max_unit_chars >= 1", || "max_unit_chars = 0".into())?;
        ensure(s.max_recovery_factor >= 1, "max_recovery_factor >= 1", || "max_recovery_factor = 0".into())?;
        let a = &self.align;
        ensure(a.min_fidelity > 0.0 && a.min_fidelity <= 1.0, "min_fidelity in (0,1]", || {
            format!("min_fidelity = {}", a.min_fidelity)
        })?;
        ensure(a.slack >= 0.0, "slack >= 0", || format!("slack = {}", a.slack))?;
        ensure(a.stride >= 1, "stride >= 1", || "stride = 0".into())?;
        ensure((0.0..=1.0).contains(&self.group.threshold), "group threshold in [0,1]", || {
            format!("threshold = {}", self.group.threshold)
        })?;
        self.client.validate()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageErrorKind {
    #[error("input store {} is missing", .0.display())]
    MissingInput(PathBuf),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{0}")]
    Backend(String),
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {kind}")]
pub struct StageError {
    pub stage: Stage,
    pub kind: StageErrorKind,
}

impl StageError {
    fn new(stage: Stage, kind: impl Into<StageErrorKind>) -> Self {
        Self { stage, kind: kind.into() }
    }

    /// True when the failure is an unreadable or unwritable file rather than
    /// a problem with the data.
    pub fn is_io(&self) -> bool {
        matches!(
            self.kind,
            StageErrorKind::MissingInput(_)
                | StageErrorKind::Store(StoreError::Io { .. } | StoreError::Missing { .. })
                | StageErrorKind::Ingest(IngestError::Io { .. })
                | StageErrorKind::Manifest(ManifestError::Io { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Disabled,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    /// Records written or requests issued by this run; zero on a rerun with
    /// unchanged inputs.
    pub new_work: u64,
    pub counts: BTreeMap<String, u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub stages: Vec<StageReport>,
    pub partial: bool,
}

impl RunSummary {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn new_work(&self) -> u64 {
        self.stages.iter().map(|r| r.new_work).sum()
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.stages {
            let status = serde_json::to_value(r.status).expect("status serializes");
            write!(f, "{:<8} {:<10} new_work={}", r.stage.name(), status.as_str().unwrap_or("?"), r.new_work)?;
            for (k, v) in &r.counts {
                write!(f, " {k}={v}")?;
            }
            if let Some(e) = &r.error {
                write!(f, " error=\"{e}\"")?;
            }
            writeln!(f)?;
        }
        write!(f, "run: {}", if self.partial { "partial" } else { "complete" })
    }
}

#[derive(Debug, Default)]
struct StageOutput {
    new_work: u64,
    counts: BTreeMap<String, u64>,
}

impl StageOutput {
    fn count(&mut self, key: &str, v: impl TryInto<u64>) {
        self.counts.insert(key.to_string(), v.try_into().unwrap_or(u64::MAX));
    }
}

fn open_input(stage: Stage, path: &Path) -> Result<RecordStore, StageError> {
    if !path.exists() {
        return Err(StageError::new(stage, StageErrorKind::MissingInput(path.to_path_buf())));
    }
    RecordStore::open_existing(path).map_err(|e| StageError::new(stage, e))
}

fn open_output(stage: Stage, path: &Path) -> Result<RecordStore, StageError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|source| StageError::new(stage, StoreError::Io { path: dir.to_path_buf(), source }))?;
    }
    RecordStore::open(path).map_err(|e| StageError::new(stage, e))
}

fn load_manifest(stage: Stage, cfg: &PipelineConfig) -> Result<CorpusManifest, StageError> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Ok(CorpusManifest::default());
    }
    CorpusManifest::load(&path).map_err(|e| StageError::new(stage, e))
}

fn ingest_stage(cfg: &PipelineConfig) -> Result<StageOutput, StageError> {
    let stage = Stage::Ingest;
    let manifest = load_manifest(stage, cfg)?;
    let listing = load_source_listing(&cfg.resolve(&cfg.paths.sources)).map_err(|e| StageError::new(stage, e))?;
    let reclass = match &cfg.paths.reclassify {
        Some(p) => ReclassificationTable::load(&cfg.resolve(p)).map_err(|e| StageError::new(stage, e))?,
        None => ReclassificationTable::default(),
    };
    let store = open_output(stage, &cfg.store_path(StoreName::Books))?;
    let books: Vec<SourceBook> = listing
        .par_iter()
        .map(|(path, id, title, declared)| {
            load_book(path, id.clone(), title, *declared, &reclass, &manifest.normalization)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| StageError::new(stage, e))?;
    let mut out = StageOutput::default();
    let mut changed = Vec::new();
    for b in &books {
        let record = Record::Book(b.clone());
        if store.get(RecordKind::Book, b.book_id.as_str()).map_err(|e| StageError::new(stage, e))?.as_ref()
            != Some(&record)
        {
            changed.push(record);
        }
    }
    store.put_batch(&changed).map_err(|e| StageError::new(stage, e))?;
    out.new_work = changed.len() as u64;
    out.count("books", books.len());
    out.count("hadith_books", books.iter().filter(|b| b.category == Category::Hadith).count());
    out.count("reclassified", books.iter().filter(|b| b.reclassified).count());
    out.count("pages", books.iter().map(|b| b.pages.len()).sum::<usize>());
    Ok(out)
}

fn hash_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn segment_stage(cfg: &PipelineConfig) -> Result<StageOutput, StageError> {
    let stage = Stage::Segment;
    let books_store = open_input(stage, &cfg.store_path(StoreName::Books))?;
    let store = open_output(stage, &cfg.store_path(StoreName::Segmented))?;
    let books = books_store.books().map_err(|e| StageError::new(stage, e))?;
    let backend: Box<dyn SegmenterBackend> = match cfg.backends.segmenter {
        SegmenterKind::Rule => Box::new(RuleBackend),
        SegmenterKind::Annotator => Box::new(AnnotatorSegmenter::new(cfg.annotator())),
    };
    let seg_cfg = toml::to_string(&cfg.segment).expect("segment config serializes");
    let mut out = StageOutput::default();
    let (mut narrations, mut unresolved, mut windows) = (0usize, 0usize, 0usize);
    for book in books.iter().filter(|b| b.category == Category::Hadith) {
        let book_json = serde_json::to_vec(book).expect("book serializes");
        let input_hash = hash_hex(&[&book_json, seg_cfg.as_bytes(), backend.name().as_bytes()]);
        let done = store.checkpoint(stage.name(), book.book_id.as_str()).map_err(|e| StageError::new(stage, e))?;
        if done.is_some_and(|c| c.input_hash == input_hash) {
            continue;
        }
        let outcome = segment_book(book, backend.as_ref(), &cfg.segment);
        narrations += outcome.narrations.len();
        unresolved += outcome.unresolved.len();
        windows += outcome.windows + outcome.recovery_windows;
        let mut batch: Vec<Record> = outcome.narrations.into_iter().map(Record::Narration).collect();
        batch.extend(outcome.unresolved.into_iter().map(Record::UnresolvedWindow));
        batch.push(Record::Checkpoint(Checkpoint {
            stage: stage.name().into(),
            key: book.book_id.as_str().into(),
            input_hash,
        }));
        out.new_work += batch.len() as u64;
        store.put_batch(&batch).map_err(|e| StageError::new(stage, e))?;
    }
    let all = store.narrations().map_err(|e| StageError::new(stage, e))?;
    out.count("narrations", all.iter().filter(|n| n.is_hadith()).count());
    out.count("non_hadith_spans", all.iter().filter(|n| !n.is_hadith()).count());
    out.count("truncation_suspect", all.iter().filter(|n| n.qc_flags.contains(&QcFlag::TruncationSuspect)).count());
    out.count("unresolved_windows", store.count(RecordKind::UnresolvedWindow));
    out.count("new_narrations", narrations);
    out.count("new_unresolved", unresolved);
    out.count("windows_run", windows);
    Ok(out)
}

fn align_stage(cfg: &PipelineConfig) -> Result<StageOutput, StageError> {
    let stage = Stage::Align;
    let input = open_input(stage, &cfg.store_path(StoreName::Segmented))?;
    let books_store = open_input(stage, &cfg.store_path(StoreName::Books))?;
    let store = open_output(stage, &cfg.store_path(StoreName::Aligned))?;
    let narrations = input.narrations().map_err(|e| StageError::new(stage, e))?;
    let pending: Vec<Narration> =
        narrations.into_iter().filter(|n| !store.contains(RecordKind::Narration, n.narration_id.as_str())).collect();
    let mut by_book: BTreeMap<BookId, Vec<Narration>> = BTreeMap::new();
    for n in pending {
        by_book.entry(n.book_id.clone()).or_default().push(n);
    }
    let mut out = StageOutput::default();
    for (book_id, mut group) in by_book {
        let Some(Record::Book(book)) =
            books_store.get(RecordKind::Book, book_id.as_str()).map_err(|e| StageError::new(stage, e))?
        else {
            return Err(StageError::new(
                stage,
                StageErrorKind::Backend(format!("book {book_id} not in the books store")),
            ));
        };
        let index = BookIndex::new(&book);
        group.par_iter_mut().for_each(|n| {
            align_narration(n, &index, &cfg.align);
        });
        let batch: Vec<Record> = group.into_iter().map(Record::Narration).collect();
        out.new_work += batch.len() as u64;
        store.put_batch(&batch).map_err(|e| StageError::new(stage, e))?;
    }
    let all = store.narrations().map_err(|e| StageError::new(stage, e))?;
    out.count("narrations", all.len());
    out.count("low_fidelity", all.iter().filter(|n| n.qc_flags.contains(&QcFlag::LowFidelity)).count());
    out.count("missing_words", all.iter().map(|n| n.missing_word_count as u64).sum::<u64>());
    Ok(out)
}

fn enrich_stage(cfg: &PipelineConfig, annotator: &Annotator) -> Result<StageOutput, StageError> {
    let stage = Stage::Enrich;
    let manifest = load_manifest(stage, cfg)?;
    let input = open_input(stage, &cfg.store_path(StoreName::Aligned))?;
    let store = open_output(stage, &cfg.store_path(StoreName::Bundles))?;
    let narrations: Vec<Narration> =
        input.narrations().map_err(|e| StageError::new(stage, e))?.into_iter().filter(Narration::is_hadith).collect();
    let existing: HashMap<NarrationId, EnrichmentBundle> = store
        .bundles()
        .map_err(|e| StageError::new(stage, e))?
        .into_iter()
        .map(|b| (b.narration_id.clone(), b))
        .collect();
    let enrich_cfg = EnrichConfig {
        languages: if cfg.enrich.languages.is_empty() {
            manifest.languages.clone()
        } else {
            cfg.enrich.languages.clone()
        },
        layers: cfg.enrich.layers.clone(),
        tag_vocabulary: manifest.tag_vocabulary.clone(),
    };
    let (bundles, stats) = enrich_all(&narrations, &existing, &enrich_cfg, annotator);
    let changed: Vec<Record> = bundles
        .iter()
        .filter(|b| existing.get(&b.narration_id) != Some(*b))
        .map(|b| Record::Enrichment(b.clone()))
        .collect();
    store.put_batch(&changed).map_err(|e| StageError::new(stage, e))?;
    let mut out = StageOutput { new_work: changed.len() as u64 + stats.requests, ..Default::default() };
    out.count("bundles", bundles.len());
    out.count("bundles_written", changed.len());
    out.count("requests", stats.requests);
    out.count("layers_ok", stats.ok);
    out.count("layers_failed", stats.failed);
    out.count("layers_qc_flagged", stats.qc_flagged);
    out.count("layers_blocked", stats.blocked);
    Ok(out)
}

fn group_stage(cfg: &PipelineConfig) -> Result<StageOutput, StageError> {
    let stage = Stage::Group;
    let input = open_input(stage, &cfg.store_path(StoreName::Aligned))?;
    let store = open_output(stage, &cfg.store_path(StoreName::Grouped))?;
    let mut narrations: Vec<Narration> =
        input.narrations().map_err(|e| StageError::new(stage, e))?.into_iter().filter(Narration::is_hadith).collect();
    narrations.sort_by(|a, b| a.narration_id.cmp(&b.narration_id));
    let items: Vec<(NarrationId, String)> =
        narrations.iter().map(|n| (n.narration_id.clone(), n.text.clone())).collect();
    let groups = group_identical(&items, cfg.group.threshold);
    let mut sizes: HashMap<&NarrationId, usize> = HashMap::new();
    for g in &groups {
        *sizes.entry(g).or_default() += 1;
    }
    let mut changed = Vec::new();
    for (n, g) in narrations.iter().zip(&groups) {
        let mut n = n.clone();
        n.group_id = (sizes[g] > 1).then(|| g.clone());
        let record = Record::Narration(n);
        let current = store.get(RecordKind::Narration, record.id().as_str()).map_err(|e| StageError::new(stage, e))?;
        if current.as_ref() != Some(&record) {
            changed.push(record);
        }
    }
    store.put_batch(&changed).map_err(|e| StageError::new(stage, e))?;
    let mut out = StageOutput { new_work: changed.len() as u64, ..Default::default() };
    out.count("narrations", narrations.len());
    out.count("groups", sizes.values().filter(|&&s| s > 1).count());
    out.count("grouped_narrations", sizes.values().filter(|&&s| s > 1).sum::<usize>());
    Ok(out)
}

/// Runs one stage on its own.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, annotator: &Annotator) -> Result<StageReport, StageError> {
    let out = match stage {
        Stage::Ingest => ingest_stage(cfg),
        Stage::Segment => segment_stage(cfg),
        Stage::Align => align_stage(cfg),
        Stage::Enrich => enrich_stage(cfg, annotator),
        Stage::Group => group_stage(cfg),
    }?;
    Ok(StageReport { stage, status: StageStatus::Completed, new_work: out.new_work, counts: out.counts, error: None })
}

/// Runs the enabled stages in order. The first failure stops the run; the
/// summary then marks it partial and names the failed stage. After a
/// complete run the effective parameters are snapshotted next to the stores
/// as `run_manifest.toml`.
pub fn run_pipeline(cfg: &PipelineConfig) -> RunSummary {
    run_pipeline_with(cfg, &cfg.annotator())
}

pub fn run_pipeline_with(cfg: &PipelineConfig, annotator: &Annotator) -> RunSummary {
    let mut stages = Vec::new();
    let mut failed = false;
    for stage in Stage::ALL {
        let blank = |status| StageReport { stage, status, new_work: 0, counts: BTreeMap::new(), error: None };
        if failed {
            stages.push(blank(StageStatus::NotRun));
            continue;
        }
        if !cfg.stages.enabled(stage) {
            stages.push(blank(StageStatus::Disabled));
            continue;
        }
        tracing::info!(stage = stage.name(), "stage start");
        match run_stage(cfg, stage, annotator) {
            Ok(report) => stages.push(report),
            Err(e) => {
                tracing::error!(stage = stage.name(), error = %e, "stage failed");
                failed = true;
                stages.push(StageReport { error: Some(e.to_string()), ..blank(StageStatus::Failed) });
            }
        }
    }
    let summary = RunSummary { stages, partial: failed };
    if !failed {
        if let Err(e) = write_run_manifest(cfg) {
            tracing::warn!(error = %e, "run manifest not written");
        }
    }
    summary
}

fn write_run_manifest(cfg: &PipelineConfig) -> Result<(), Box<dyn std::error::Error>> {
    let mut manifest = load_manifest(Stage::Ingest, cfg)?;
    let effective: toml::Table = toml::from_str(&cfg.to_toml())?;
    manifest.snapshot = effective.into_iter().collect();
    let dir = cfg.resolve(&cfg.paths.store_dir);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("run_manifest.toml"), manifest.to_toml())?;
    Ok(())
}

/// The run's terminal failure, if any.
pub fn failure(summary: &RunSummary) -> Option<&StageReport> {
    summary.stages.iter().find(|r| r.status == StageStatus::Failed)
}

pub fn sample_config_text() -> String {
    PipelineConfig::default().to_toml()
}
