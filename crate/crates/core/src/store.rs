//! Append-only JSON Lines record store with a sidecar offset index.
//!
//! Every line is one self-describing record:
//!
//! ```text
//! {"schema_version":1,"kind":"narration","data":{...}}
//! ```
//!
//! Records are keyed by `(kind, id)`. Writing a record whose key already
//! exists appends a new version; reads return the newest one. The sidecar
//! `<store>.idx` maps keys to byte offsets and is rebuilt from the store
//! whenever it is missing or inconsistent, so it never needs to be trusted
//! over the data file.
//!
//! One writer per store file. Within a process the store serializes writers
//! itself and readers run concurrently.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::evaluate::EvaluationRecord;
use crate::model::{EnrichmentBundle, InvariantViolation, Narration, SourceBook, Validate};
use crate::segment::UnresolvedWindow;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Book,
    Narration,
    Enrichment,
    Evaluation,
    Checkpoint,
    UnresolvedWindow,
}

/// Marks a unit of stage work as done for a given input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: String,
    pub key: String,
    pub input_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Record {
    Book(SourceBook),
    Narration(Narration),
    Enrichment(EnrichmentBundle),
    Evaluation(EvaluationRecord),
    Checkpoint(Checkpoint),
    UnresolvedWindow(UnresolvedWindow),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub kind: RecordKind,
    pub id: String,
}

impl RecordKey {
    pub fn new(kind: RecordKind, id: impl Into<String>) -> Self {
        Self { kind, id: id.into() }
    }
}

impl Record {
    pub fn kind(&self) -> RecordKind {
        match self {
            Record::Book(_) => RecordKind::Book,
            Record::Narration(_) => RecordKind::Narration,
            Record::Enrichment(_) => RecordKind::Enrichment,
            Record::Evaluation(_) => RecordKind::Evaluation,
            Record::Checkpoint(_) => RecordKind::Checkpoint,
            Record::UnresolvedWindow(_) => RecordKind::UnresolvedWindow,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Record::Book(b) => b.book_id.0.clone(),
            Record::Narration(n) => n.narration_id.0.clone(),
            Record::Enrichment(e) => e.narration_id.0.clone(),
            Record::Evaluation(e) => e.key(),
            Record::Checkpoint(c) => format!("{}:{}", c.stage, c.key),
            Record::UnresolvedWindow(w) => w.key(),
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.kind(), self.id())
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        match self {
            Record::Book(b) => b.validate(),
            Record::Narration(n) => n.validate(),
            Record::Enrichment(e) => e.validate(),
            Record::Evaluation(e) => e.validate(),
            Record::Checkpoint(_) | Record::UnresolvedWindow(_) => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct LineOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a Record,
}

#[derive(Deserialize)]
struct LineIn {
    schema_version: u32,
    #[serde(flatten)]
    record: Record,
}

/// Serializes a record to its store line (without the trailing newline).
pub fn encode_line(record: &Record) -> String {
    serde_json::to_string(&LineOut { schema_version: SCHEMA_VERSION, record }).expect("records serialize")
}

/// Parses one store line.
pub fn decode_line(line: &str) -> Result<Record, String> {
    let parsed: LineIn = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if parsed.schema_version != SCHEMA_VERSION {
        return Err(format!("unsupported schema_version {}", parsed.schema_version));
    }
    Ok(parsed.record)
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("store {path} does not exist")]
    Missing { path: PathBuf },
    #[error("record rejected: {0}")]
    Invalid(#[from] InvariantViolation),
    #[error("corrupted record at line {line}: {reason}")]
    Corrupt { line: u64, reason: String },
}

/// Location of a stored line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredOffset {
    pub offset: u64,
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptLine {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    off: u64,
    len: u64,
    line: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key: Option<RecordKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Default)]
struct Index {
    latest: HashMap<RecordKey, IndexEntry>,
    order: Vec<RecordKey>,
    corrupt: Vec<CorruptLine>,
}

impl Index {
    fn apply(&mut self, entry: IndexEntry) {
        match (&entry.key, &entry.error) {
            (Some(key), _) => {
                if !self.latest.contains_key(key) {
                    self.order.push(key.clone());
                }
                self.latest.insert(key.clone(), entry);
            }
            (None, Some(reason)) => self.corrupt.push(CorruptLine { line: entry.line, reason: reason.clone() }),
            (None, None) => {}
        }
    }
}

struct Writer {
    data: File,
    idx: BufWriter<File>,
    end: u64,
    next_line: u64,
    needs_newline: bool,
}

pub struct RecordStore {
    path: PathBuf,
    idx_path: PathBuf,
    writer: Mutex<Writer>,
    index: RwLock<Index>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".idx");
    PathBuf::from(s)
}

impl std::fmt::Debug for RecordStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordStore").field("path", &self.path).finish()
    }
}

impl RecordStore {
    /// Opens an existing store; fails with [`StoreError::Missing`] otherwise.
    pub fn open_existing(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(StoreError::Missing { path: path.to_path_buf() });
        }
        Self::open(path)
    }

    /// Opens a store, creating an empty one if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
        }
        let idx_path = index_path(&path);
        let data = OpenOptions::new().create(true).append(true).read(true).open(&path).map_err(io_err(&path))?;
        let file_len = data.metadata().map_err(io_err(&path))?.len();

        let (mut index, mut covered, mut next_line, rebuild) = match load_index(&path, &idx_path, file_len) {
            Some((index, covered, next_line)) => (index, covered, next_line, false),
            None => (Index::default(), 0, 1, true),
        };

        let mut idx_file = if rebuild {
            File::create(&idx_path).map_err(io_err(&idx_path))?
        } else {
            OpenOptions::new().append(true).open(&idx_path).map_err(io_err(&idx_path))?
        };

        let mut needs_newline = false;
        if covered < file_len {
            let tail = scan_from(&path, covered, next_line)?;
            let mut buf = BufWriter::new(&mut idx_file);
            for entry in tail.entries {
                writeln!(buf, "{}", serde_json::to_string(&entry).expect("index entry serializes"))
                    .map_err(io_err(&idx_path))?;
                next_line = entry.line + 1;
                covered = entry.off + entry.len;
                index.apply(entry);
            }
            buf.flush().map_err(io_err(&idx_path))?;
            needs_newline = tail.unterminated;
            if needs_newline {
                covered = file_len;
            }
        }
        debug_assert!(covered <= file_len);

        Ok(Self {
            writer: Mutex::new(Writer { data, idx: BufWriter::new(idx_file), end: file_len, next_line, needs_newline }),
            index: RwLock::new(index),
            path,
            idx_path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates and durably appends one record.
    pub fn put(&self, record: &Record) -> Result<StoredOffset, StoreError> {
        Ok(self.put_batch(std::slice::from_ref(record))?[0])
    }

    /// Appends several records with a single sync. Every record is validated
    /// before anything is written.
    pub fn put_batch(&self, records: &[Record]) -> Result<Vec<StoredOffset>, StoreError> {
        for r in records {
            r.validate()?;
        }
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let mut w = self.writer.lock().expect("store writer poisoned");
        let mut buf = Vec::new();
        let mut offset = w.end;
        if w.needs_newline {
            buf.push(b'\n');
            offset += 1;
        }
        let mut entries = Vec::with_capacity(records.len());
        let mut line = w.next_line;
        for r in records {
            let encoded = encode_line(r);
            let len = encoded.len() as u64 + 1;
            entries.push(IndexEntry { off: offset, len, line, key: Some(r.key()), error: None });
            buf.extend_from_slice(encoded.as_bytes());
            buf.push(b'\n');
            offset += len;
            line += 1;
        }
        w.data.write_all(&buf).map_err(io_err(&self.path))?;
        w.data.flush().map_err(io_err(&self.path))?;
        w.data.sync_data().map_err(io_err(&self.path))?;
        w.end = offset;
        w.next_line = line;
        w.needs_newline = false;

        for e in &entries {
            let s = serde_json::to_string(e).expect("index entry serializes");
            writeln!(w.idx, "{s}").map_err(io_err(&self.idx_path))?;
        }
        w.idx.flush().map_err(io_err(&self.idx_path))?;

        let out = entries.iter().map(|e| StoredOffset { offset: e.off, line: e.line }).collect();
        let mut index = self.index.write().expect("store index poisoned");
        for e in entries {
            index.apply(e);
        }
        Ok(out)
    }

    /// Latest version of the record with this key, or `None`.
    pub fn get(&self, kind: RecordKind, id: &str) -> Result<Option<Record>, StoreError> {
        let entry = {
            let index = self.index.read().expect("store index poisoned");
            match index.latest.get(&RecordKey::new(kind, id)) {
                Some(e) => e.clone(),
                None => return Ok(None),
            }
        };
        let mut file = File::open(&self.path).map_err(io_err(&self.path))?;
        read_entry(&mut file, &self.path, &entry).map(Some)
    }

    /// Raw bytes of the latest line for a key, without the newline.
    pub fn get_raw(&self, kind: RecordKind, id: &str) -> Result<Option<String>, StoreError> {
        let entry = {
            let index = self.index.read().expect("store index poisoned");
            match index.latest.get(&RecordKey::new(kind, id)) {
                Some(e) => e.clone(),
                None => return Ok(None),
            }
        };
        let mut file = File::open(&self.path).map_err(io_err(&self.path))?;
        read_bytes(&mut file, &self.path, &entry).map(Some)
    }

    pub fn contains(&self, kind: RecordKind, id: &str) -> bool {
        self.index.read().expect("store index poisoned").latest.contains_key(&RecordKey::new(kind, id))
    }

    /// Keys of one kind in first-write order.
    pub fn keys(&self, kind: RecordKind) -> Vec<String> {
        let index = self.index.read().expect("store index poisoned");
        index.order.iter().filter(|k| k.kind == kind).map(|k| k.id.clone()).collect()
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        let index = self.index.read().expect("store index poisoned");
        index.order.iter().filter(|k| k.kind == kind).count()
    }

    /// Latest versions of all records of one kind, in first-write order.
    pub fn latest(&self, kind: RecordKind) -> Result<Vec<Record>, StoreError> {
        let entries: Vec<IndexEntry> = {
            let index = self.index.read().expect("store index poisoned");
            index.order.iter().filter(|k| k.kind == kind).map(|k| index.latest[k].clone()).collect()
        };
        let mut file = File::open(&self.path).map_err(io_err(&self.path))?;
        entries.iter().map(|e| read_entry(&mut file, &self.path, e)).collect()
    }

    /// Lines that failed to parse, with their 1-based line numbers.
    pub fn corrupt_lines(&self) -> Vec<CorruptLine> {
        self.index.read().expect("store index poisoned").corrupt.clone()
    }

    pub fn books(&self) -> Result<Vec<SourceBook>, StoreError> {
        Ok(self
            .latest(RecordKind::Book)?
            .into_iter()
            .filter_map(|r| match r {
                Record::Book(b) => Some(b),
                _ => None,
            })
            .collect())
    }

    pub fn narrations(&self) -> Result<Vec<Narration>, StoreError> {
        Ok(self
            .latest(RecordKind::Narration)?
            .into_iter()
            .filter_map(|r| match r {
                Record::Narration(n) => Some(n),
                _ => None,
            })
            .collect())
    }

    pub fn bundles(&self) -> Result<Vec<EnrichmentBundle>, StoreError> {
        Ok(self
            .latest(RecordKind::Enrichment)?
            .into_iter()
            .filter_map(|r| match r {
                Record::Enrichment(b) => Some(b),
                _ => None,
            })
            .collect())
    }

    pub fn evaluations(&self) -> Result<Vec<EvaluationRecord>, StoreError> {
        Ok(self
            .latest(RecordKind::Evaluation)?
            .into_iter()
            .filter_map(|r| match r {
                Record::Evaluation(e) => Some(e),
                _ => None,
            })
            .collect())
    }

    pub fn checkpoint(&self, stage: &str, key: &str) -> Result<Option<Checkpoint>, StoreError> {
        Ok(match self.get(RecordKind::Checkpoint, &format!("{stage}:{key}"))? {
            Some(Record::Checkpoint(c)) => Some(c),
            _ => None,
        })
    }
}

fn read_bytes(file: &mut File, path: &Path, entry: &IndexEntry) -> Result<String, StoreError> {
    file.seek(SeekFrom::Start(entry.off)).map_err(io_err(path))?;
    let mut buf = vec![0u8; entry.len as usize];
    file.read_exact(&mut buf).map_err(io_err(path))?;
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    String::from_utf8(buf).map_err(|e| StoreError::Corrupt { line: entry.line, reason: e.to_string() })
}

fn read_entry(file: &mut File, path: &Path, entry: &IndexEntry) -> Result<Record, StoreError> {
    let line = read_bytes(file, path, entry)?;
    let record = decode_line(&line).map_err(|reason| StoreError::Corrupt { line: entry.line, reason })?;
    if Some(record.key()) != entry.key {
        return Err(StoreError::Corrupt { line: entry.line, reason: "record key does not match index".into() });
    }
    Ok(record)
}

struct TailScan {
    entries: Vec<IndexEntry>,
    unterminated: bool,
}

fn scan_from(path: &Path, start: u64, first_line: u64) -> Result<TailScan, StoreError> {
    let mut file = File::open(path).map_err(io_err(path))?;
    file.seek(SeekFrom::Start(start)).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut off = start;
    let mut line_no = first_line;
    let mut buf = Vec::new();
    let mut unterminated = false;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        let terminated = buf.last() == Some(&b'\n');
        let content = if terminated { &buf[..n - 1] } else { &buf[..] };
        let parsed = std::str::from_utf8(content).map_err(|e| e.to_string()).and_then(|s| {
            if s.trim().is_empty() {
                Err("blank line".to_string())
            } else {
                decode_line(s)
            }
        });
        let entry = match parsed {
            Ok(record) if terminated => {
                IndexEntry { off, len: n as u64, line: line_no, key: Some(record.key()), error: None }
            }
            Ok(_) => IndexEntry {
                off,
                len: n as u64,
                line: line_no,
                key: None,
                error: Some("unterminated final line".into()),
            },
            Err(reason) => IndexEntry { off, len: n as u64, line: line_no, key: None, error: Some(reason) },
        };
        entries.push(entry);
        if !terminated {
            unterminated = true;
        }
        off += n as u64;
        line_no += 1;
    }
    Ok(TailScan { entries, unterminated })
}

/// Loads the sidecar index if it is consistent with the data file.
/// Returns the index, the byte offset it covers, and the next line number.
fn load_index(path: &Path, idx_path: &Path, file_len: u64) -> Option<(Index, u64, u64)> {
    let file = File::open(idx_path).ok()?;
    let mut index = Index::default();
    let mut covered = 0u64;
    let mut next_line = 1u64;
    let mut last: Option<IndexEntry> = None;
    for line in BufReader::new(file).lines() {
        let line = line.ok()?;
        let entry: IndexEntry = serde_json::from_str(&line).ok()?;
        if entry.off != covered || entry.line != next_line || entry.off + entry.len > file_len {
            return None;
        }
        covered = entry.off + entry.len;
        next_line = entry.line + 1;
        if entry.key.is_some() {
            last = Some(entry.clone());
        }
        index.apply(entry);
    }
    if let Some(entry) = last {
        let mut data = File::open(path).ok()?;
        let bytes = read_bytes(&mut data, path, &entry).ok()?;
        let record = decode_line(&bytes).ok()?;
        if Some(record.key()) != entry.key {
            return None;
        }
    }
    Some((index, covered, next_line))
}

/// Result of reading every line of a store file.
#[derive(Debug, Default)]
pub struct ScanReport {
    pub records: Vec<(u64, Record)>,
    pub errors: Vec<CorruptLine>,
}

/// Parses every line of a store without using the index.
pub fn scan(path: impl AsRef<Path>) -> Result<ScanReport, StoreError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(StoreError::Missing { path: path.to_path_buf() });
    }
    let tail = scan_from(path, 0, 1)?;
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut report = ScanReport::default();
    for entry in tail.entries {
        match &entry.error {
            Some(reason) => report.errors.push(CorruptLine { line: entry.line, reason: reason.clone() }),
            None => report.records.push((entry.line, read_entry(&mut file, path, &entry)?)),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BookId, NarrationId};
    use std::collections::{BTreeMap, BTreeSet};

    fn narration(i: usize, fidelity: f64) -> Narration {
        let book = BookId::from("book-a");
        let text = format!("نص رقم {i}.");
        Narration {
            narration_id: NarrationId::derive(&book, 1, i * 10, "حدثنا علي قال", &text),
            book_id: book,
            page_start: 1,
            page_end: 1,
            char_start: i * 10,
            char_end: i * 10 + 8,
            chain: "حدثنا علي قال".into(),
            separator: ": ".into(),
            text,
            fidelity,
            confidence: 1.0,
            missing_word_count: 0,
            qc_flags: BTreeSet::new(),
            group_id: None,
        }
    }

    #[test]
    fn put_then_get_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path().join("s.jsonl")).unwrap();
        let r = Record::Narration(narration(1, 0.93));
        let off = store.put(&r).unwrap();
        assert_eq!(off, StoredOffset { offset: 0, line: 1 });
        let raw = store.get_raw(RecordKind::Narration, &r.id()).unwrap().unwrap();
        assert_eq!(raw, encode_line(&r));
        let back = store.get(RecordKind::Narration, &r.id()).unwrap().unwrap();
        assert_eq!(encode_line(&back), raw);
        assert_eq!(back, r);
    }

    #[test]
    fn invalid_record_rejected_with_invariant_name() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path().join("s.jsonl")).unwrap();
        let mut n = narration(1, 1.0);
        n.char_end = n.char_start;
        match store.put(&Record::Narration(n)) {
            Err(StoreError::Invalid(v)) => assert_eq!(v.invariant, "char_start < char_end"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.count(RecordKind::Narration), 0);
    }

    #[test]
    fn unknown_id_is_absent() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path().join("s.jsonl")).unwrap();
        assert!(store.get(RecordKind::Narration, "0000000000000000").unwrap().is_none());
    }

    #[test]
    fn last_write_wins_matches_map_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let store = RecordStore::open(&path).unwrap();
        let mut oracle: BTreeMap<String, Record> = BTreeMap::new();
        let writes = [(1, 0.5), (2, 0.6), (1, 0.9), (3, 0.1), (2, 0.2), (1, 0.95)];
        for (i, f) in writes {
            let r = Record::Narration(narration(i, f));
            store.put(&r).unwrap();
            oracle.insert(r.id(), r);
        }
        let first = narration(1, 0.0).narration_id.0;
        match store.get(RecordKind::Narration, &first).unwrap().unwrap() {
            Record::Narration(n) => assert_eq!(n.fidelity, 0.95),
            _ => unreachable!(),
        }
        for reopen in [false, true] {
            let s = if reopen { RecordStore::open(&path).unwrap() } else { RecordStore::open(&path).unwrap() };
            for (id, r) in &oracle {
                assert_eq!(s.get(RecordKind::Narration, id).unwrap().as_ref(), Some(r));
            }
            assert_eq!(s.count(RecordKind::Narration), oracle.len());
            if reopen {
                std::fs::remove_file(index_path(&path)).unwrap();
            }
        }
        let rebuilt = RecordStore::open(&path).unwrap();
        let latest: BTreeMap<String, Record> =
            rebuilt.latest(RecordKind::Narration).unwrap().into_iter().map(|r| (r.id(), r)).collect();
        assert_eq!(latest, oracle);
    }

    #[test]
    fn corrupted_line_reported_and_rest_readable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let ids: Vec<String> = {
            let store = RecordStore::open(&path).unwrap();
            (0..10)
                .map(|i| {
                    let r = Record::Narration(narration(i, 1.0));
                    store.put(&r).unwrap();
                    r.id()
                })
                .collect()
        };
        // Garble line 4 in place, keeping its length.
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = "#".repeat(lines[3].len());
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();

        // Manual parse as the oracle.
        let manual_ok = lines.iter().filter(|l| decode_line(l).is_ok()).count();
        assert_eq!(manual_ok, 9);

        let report = scan(&path).unwrap();
        assert_eq!(report.records.len(), 9);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].line, 4);

        // Index still present: lookup of the bad record names the line.
        let store = RecordStore::open(&path).unwrap();
        match store.get(RecordKind::Narration, &ids[3]) {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        for (i, id) in ids.iter().enumerate() {
            if i != 3 {
                assert!(store.get(RecordKind::Narration, id).unwrap().is_some());
            }
        }

        // Index rebuilt from scratch: bad line recorded, others indexed.
        std::fs::remove_file(index_path(&path)).unwrap();
        let store = RecordStore::open(&path).unwrap();
        assert_eq!(store.count(RecordKind::Narration), 9);
        assert_eq!(store.corrupt_lines().iter().map(|c| c.line).collect::<Vec<_>>(), vec![4]);
        // Appending after a rebuild continues the line numbering.
        let off = store.put(&Record::Narration(narration(42, 1.0))).unwrap();
        assert_eq!(off.line, 11);
    }

    #[test]
    fn unterminated_tail_does_not_merge_with_next_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        {
            let store = RecordStore::open(&path).unwrap();
            store.put(&Record::Narration(narration(0, 1.0))).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"schema_version\":1,\"kind\":\"narr").unwrap();
        drop(f);
        let store = RecordStore::open(&path).unwrap();
        assert_eq!(store.corrupt_lines().len(), 1);
        let r = Record::Narration(narration(5, 1.0));
        store.put(&r).unwrap();
        let reopened = RecordStore::open(&path).unwrap();
        assert!(reopened.get(RecordKind::Narration, &r.id()).unwrap().is_some());
        assert_eq!(scan(&path).unwrap().records.len(), 2);
    }

    #[test]
    fn stale_index_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        {
            let store = RecordStore::open(&path).unwrap();
            for i in 0..3 {
                store.put(&Record::Narration(narration(i, 1.0))).unwrap();
            }
        }
        // Replace the data file with a shorter one.
        let first_line = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        std::fs::write(&path, first_line + "\n").unwrap();
        let store = RecordStore::open(&path).unwrap();
        assert_eq!(store.count(RecordKind::Narration), 1);
    }

    #[test]
    fn concurrent_puts_all_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let store = std::sync::Arc::new(RecordStore::open(&path).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let store = store.clone();
                std::thread::spawn(move || {
                    for i in 0..10 {
                        store.put(&Record::Narration(narration(t * 100 + i, 1.0))).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(store.count(RecordKind::Narration), 80);
        let report = scan(&path).unwrap();
        assert_eq!(report.records.len(), 80);
        assert!(report.errors.is_empty());
        assert_eq!(RecordStore::open(&path).unwrap().count(RecordKind::Narration), 80);
    }
}
