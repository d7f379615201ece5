//! Loading raw book files into normalized [`SourceBook`]s.
//!
//! A book is either one UTF-8 file with page-marker lines or a directory
//! holding one file per page. The marker is a line of the form
//!
//! ```text
//! [[page 12]]
//! ```
//!
//! and everything up to the next marker belongs to page 12. For the
//! directory layout each file is named by its page number (`12.txt`).
//! Pages are sorted by number whatever their order on disk.

mod normalize;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub use normalize::{normalize, NormalizationProfile};

use crate::model::{BookId, Category, SourceBook, SourcePage};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} is not valid UTF-8 at byte offset {offset}")]
    Encoding { path: PathBuf, offset: usize },
    #[error("{path} contains no pages")]
    NoPages { path: PathBuf },
    #[error("{path}: page {page} appears more than once")]
    DuplicatePage { path: PathBuf, page: u32 },
    #[error("{path}: invalid page marker or page file `{detail}`")]
    BadPage { path: PathBuf, detail: String },
    #[error("{path}: text before the first page marker")]
    TextBeforeFirstMarker { path: PathBuf },
    #[error("{path}: {detail}")]
    Table { path: PathBuf, detail: String },
}

fn read_utf8(path: &Path) -> Result<String, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    String::from_utf8(bytes)
        .map_err(|e| IngestError::Encoding { path: path.to_path_buf(), offset: e.utf8_error().valid_up_to() })
}

fn parse_marker(line: &str) -> Option<&str> {
    line.trim().strip_prefix("[[page ")?.strip_suffix("]]")
}

/// Splits a marker-delimited file into `(page_no, raw_text)` chunks in file order.
fn split_pages(path: &Path, content: &str) -> Result<Vec<(u32, String)>, IngestError> {
    let mut pages: Vec<(u32, String)> = Vec::new();
    let mut preamble = String::new();
    for line in content.split_inclusive('\n') {
        if let Some(num) = parse_marker(line) {
            let page_no: u32 =
                num.trim().parse().ok().filter(|n| *n >= 1).ok_or_else(|| IngestError::BadPage {
                    path: path.to_path_buf(),
                    detail: line.trim().to_string(),
                })?;
            pages.push((page_no, String::new()));
            continue;
        }
        match pages.last_mut() {
            Some((_, text)) => text.push_str(line),
            None => preamble.push_str(line),
        }
    }
    if pages.is_empty() {
        if preamble.trim().is_empty() {
            return Ok(Vec::new());
        }
        return Ok(vec![(1, preamble)]);
    }
    if !preamble.trim().is_empty() {
        return Err(IngestError::TextBeforeFirstMarker { path: path.to_path_buf() });
    }
    Ok(pages)
}

fn read_page_dir(path: &Path) -> Result<Vec<(u32, String)>, IngestError> {
    let io = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut pages = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io)? {
        let entry = entry.map_err(io)?;
        let p = entry.path();
        if !p.is_file() {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let page_no: u32 = stem
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| IngestError::BadPage { path: path.to_path_buf(), detail: p.display().to_string() })?;
        pages.push((page_no, read_utf8(&p)?));
    }
    Ok(pages)
}

/// Loads a book and normalizes its pages.
///
/// `reclassification` overrides the declared category; when it changes the
/// category the book is marked `reclassified`.
pub fn load_book(
    path: &Path,
    book_id: BookId,
    title: &str,
    declared: Category,
    reclassification: &ReclassificationTable,
    profile: &NormalizationProfile,
) -> Result<SourceBook, IngestError> {
    let mut chunks = if path.is_dir() { read_page_dir(path)? } else { split_pages(path, &read_utf8(path)?)? };
    if chunks.is_empty() {
        return Err(IngestError::NoPages { path: path.to_path_buf() });
    }
    chunks.sort_by_key(|(n, _)| *n);
    for pair in chunks.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(IngestError::DuplicatePage { path: path.to_path_buf(), page: pair[0].0 });
        }
    }
    let (category, reclassified) = match reclassification.lookup(&book_id) {
        Some(c) if c != declared => (c, true),
        _ => (declared, false),
    };
    let pages = chunks
        .into_iter()
        .map(|(page_no, raw_text)| SourcePage { page_no, normalized_text: normalize(&raw_text, profile), raw_text })
        .collect();
    Ok(SourceBook { book_id, title: title.to_string(), category, reclassified, pages })
}

/// Editable `book_id,category` table that records manual reclassification.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReclassificationTable {
    entries: BTreeMap<BookId, Category>,
}

#[derive(Deserialize)]
struct ReclassRow {
    book_id: String,
    category: String,
}

impl ReclassificationTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (BookId, Category)>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| IngestError::Table { path: path.to_path_buf(), detail: e.to_string() })?;
        let mut entries = BTreeMap::new();
        for row in reader.deserialize::<ReclassRow>() {
            let row = row.map_err(|e| IngestError::Table { path: path.to_path_buf(), detail: e.to_string() })?;
            let category =
                row.category.parse().map_err(|detail| IngestError::Table { path: path.to_path_buf(), detail })?;
            entries.insert(BookId::new(row.book_id), category);
        }
        Ok(Self { entries })
    }

    pub fn lookup(&self, id: &BookId) -> Option<Category> {
        self.entries.get(id).copied()
    }
}

/// One row of the source listing.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SourceEntry {
    /// Relative paths resolve against the listing's directory.
    pub path: PathBuf,
    pub category: String,
    #[serde(default)]
    pub book_id: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
}

/// Reads the `path,category[,book_id,title]` listing of source files.
pub fn load_source_listing(path: &Path) -> Result<Vec<(PathBuf, BookId, String, Category)>, IngestError> {
    let table_err = |detail: String| IngestError::Table { path: path.to_path_buf(), detail };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| table_err(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for row in reader.deserialize::<SourceEntry>() {
        let row = row.map_err(|e| table_err(e.to_string()))?;
        let file = if row.path.is_absolute() { row.path.clone() } else { base.join(&row.path) };
        let id = row
            .book_id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| row.path.file_stem().and_then(|s| s.to_str()).unwrap_or("book").to_string());
        if !seen.insert(id.clone()) {
            return Err(table_err(format!("duplicate book_id `{id}`")));
        }
        let category = row.category.parse().map_err(table_err)?;
        let title = row.title.filter(|s| !s.is_empty()).unwrap_or_else(|| id.clone());
        out.push((file, BookId::new(id), title, category));
    }
    Ok(out)
}

/// Books that reach segmentation: those whose final category is hadith.
pub fn hadith_books(books: impl IntoIterator<Item = SourceBook>) -> Vec<SourceBook> {
    books.into_iter().filter(|b| b.category == Category::Hadith).collect()
}
