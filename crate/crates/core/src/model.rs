//! Shared domain types: source books, narrations, enrichment bundles and the
//! corpus manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::NormalizationProfile;

/// A record failed one of its type invariants.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invariant `{invariant}` violated: {detail}")]
pub struct InvariantViolation {
    /// The invariant, stated as the condition that must hold.
    pub invariant: &'static str,
    pub detail: String,
}

impl InvariantViolation {
    pub fn new(invariant: &'static str, detail: impl Into<String>) -> Self {
        Self { invariant, detail: detail.into() }
    }
}

pub(crate) fn ensure(
    cond: bool,
    invariant: &'static str,
    detail: impl FnOnce() -> String,
) -> Result<(), InvariantViolation> {
    if cond {
        Ok(())
    } else {
        Err(InvariantViolation::new(invariant, detail()))
    }
}

/// Types that carry checkable invariants.
pub trait Validate {
    fn validate(&self) -> Result<(), InvariantViolation>;
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Stable identifier of a source book, unique within a manifest.
    BookId
);
string_id!(
    /// 16 hex chars derived from a narration's source coordinates and content.
    NarrationId
);

impl NarrationId {
    /// Derives the identifier from the coordinates the segmenter assigned and
    /// the normalized chain and text. Equal inputs give equal IDs on every
    /// platform.
    pub fn derive(book_id: &BookId, page_start: u32, char_start: usize, chain: &str, text: &str) -> Self {
        let mut h = Sha256::new();
        h.update(book_id.0.as_bytes());
        h.update([0x1f]);
        h.update(page_start.to_le_bytes());
        h.update((char_start as u64).to_le_bytes());
        h.update([0x1f]);
        h.update(chain.as_bytes());
        h.update([0x1f]);
        h.update(text.as_bytes());
        let digest = h.finalize();
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Hadith,
    Fiqh,
    Tafsir,
    Other,
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hadith" => Ok(Self::Hadith),
            "fiqh" => Ok(Self::Fiqh),
            "tafsir" => Ok(Self::Tafsir),
            "other" => Ok(Self::Other),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePage {
    pub page_no: u32,
    pub raw_text: String,
    pub normalized_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBook {
    pub book_id: BookId,
    pub title: String,
    pub category: Category,
    pub reclassified: bool,
    pub pages: Vec<SourcePage>,
}

/// Separator placed between consecutive pages in the page stream.
pub const PAGE_SEPARATOR: char = ' ';

/// The normalized pages of a book joined into one char sequence, with a
/// table mapping stream offsets back to page numbers.
#[derive(Debug, Clone)]
pub struct PageStream {
    pub chars: Vec<char>,
    /// `(page_no, start offset)` in ascending order.
    pub page_starts: Vec<(u32, usize)>,
}

impl PageStream {
    /// Page number containing stream offset `offset`. A page separator
    /// belongs to the page it follows.
    pub fn page_of(&self, offset: usize) -> u32 {
        let idx = self.page_starts.partition_point(|(_, start)| *start <= offset);
        self.page_starts[idx.saturating_sub(1)].0
    }

    /// `[start, end)` of page `page_no` excluding the trailing separator.
    pub fn page_range(&self, page_no: u32) -> Option<(usize, usize)> {
        let idx = self.page_starts.iter().position(|(p, _)| *p == page_no)?;
        let start = self.page_starts[idx].1;
        let end = match self.page_starts.get(idx + 1) {
            Some((_, next)) => next - 1,
            None => self.chars.len(),
        };
        Some((start, end))
    }

    pub fn slice(&self, start: usize, end: usize) -> String {
        self.chars[start..end].iter().collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

impl SourceBook {
    pub fn stream(&self) -> PageStream {
        let mut chars = Vec::new();
        let mut page_starts = Vec::with_capacity(self.pages.len());
        for (i, page) in self.pages.iter().enumerate() {
            if i > 0 {
                chars.push(PAGE_SEPARATOR);
            }
            page_starts.push((page.page_no, chars.len()));
            chars.extend(page.normalized_text.chars());
        }
        PageStream { chars, page_starts }
    }
}

impl Validate for SourceBook {
    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure(!self.book_id.0.is_empty(), "book_id non-empty", || "empty book_id".into())?;
        ensure(!self.pages.is_empty(), "book has at least one page", || format!("book {} has no pages", self.book_id))?;
        let mut prev = 0u32;
        for page in &self.pages {
            ensure(page.page_no >= 1, "page numbers >= 1", || format!("page number {}", page.page_no))?;
            ensure(page.page_no > prev, "page numbers strictly increasing", || {
                format!("page {} follows page {}", page.page_no, prev)
            })?;
            prev = page.page_no;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcFlag {
    NonHadithSuspect,
    TruncationSuspect,
    LowFidelity,
    AnnotatorAnomaly,
}

/// One extracted narration: chain of transmitters plus main text, with its
/// coordinates in the normalized page stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narration {
    pub narration_id: NarrationId,
    pub book_id: BookId,
    pub page_start: u32,
    pub page_end: u32,
    /// Char offsets into the book's normalized page stream.
    pub char_start: usize,
    pub char_end: usize,
    pub chain: String,
    /// Source text between the chain and the main text, e.g. `": "`.
    #[serde(default)]
    pub separator: String,
    pub text: String,
    pub fidelity: f64,
    /// Segmenter confidence in the chain/text split.
    #[serde(default = "one")]
    pub confidence: f64,
    #[serde(default)]
    pub missing_word_count: u32,
    #[serde(default)]
    pub qc_flags: BTreeSet<QcFlag>,
    #[serde(default)]
    pub group_id: Option<NarrationId>,
}

fn one() -> f64 {
    1.0
}

impl Narration {
    /// Chain, separator and text concatenated: the string aligned against
    /// the source span.
    pub fn full_text(&self) -> String {
        let mut s = String::with_capacity(self.chain.len() + self.separator.len() + self.text.len());
        s.push_str(&self.chain);
        s.push_str(&self.separator);
        s.push_str(&self.text);
        s
    }

    pub fn is_hadith(&self) -> bool {
        !self.qc_flags.contains(&QcFlag::NonHadithSuspect)
    }
}

impl Validate for Narration {
    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure(self.page_start >= 1, "page_start >= 1", || format!("page_start = {}", self.page_start))?;
        ensure(self.page_start <= self.page_end, "page_start <= page_end", || {
            format!("page_start {} > page_end {}", self.page_start, self.page_end)
        })?;
        ensure(self.char_start < self.char_end, "char_start < char_end", || {
            format!("char_start {} >= char_end {}", self.char_start, self.char_end)
        })?;
        ensure((0.0..=1.0).contains(&self.fidelity), "fidelity in [0,1]", || format!("fidelity = {}", self.fidelity))?;
        ensure((0.0..=1.0).contains(&self.confidence), "confidence in [0,1]", || {
            format!("confidence = {}", self.confidence)
        })?;
        ensure(
            self.narration_id.0.len() == 16 && self.narration_id.0.chars().all(|c| c.is_ascii_hexdigit()),
            "narration_id is 16 hex chars",
            || format!("narration_id = {:?}", self.narration_id.0),
        )?;
        Ok(())
    }
}

/// Outcome of one enrichment layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LayerStatus {
    Ok,
    /// Retries exhausted or a fatal transport error.
    Failed {
        reason: String,
    },
    /// The annotator answered but the output failed a QC filter; the output
    /// is not stored.
    QcFlagged {
        reason: String,
    },
    /// Not attempted because a layer it depends on is not available.
    BlockedByUpstream {
        upstream: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProvenance {
    pub annotator: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub attempts: u32,
    #[serde(flatten)]
    pub status: LayerStatus,
}

/// Per-narration annotation layers. A layer that failed is absent from its
/// field and described in `provenance`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnrichmentBundle {
    pub narration_id: NarrationId,
    #[serde(default)]
    pub translations: BTreeMap<String, String>,
    #[serde(default)]
    pub diacritized_chain: Option<String>,
    #[serde(default)]
    pub diacritized_text: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub key_points: Option<Vec<String>>,
    #[serde(default)]
    pub tags: Option<Vec<String>>,
    /// Keyed by layer name (`translate:en`, `diacritize:text`, ...).
    #[serde(default)]
    pub provenance: BTreeMap<String, LayerProvenance>,
    /// QC flags carried over from the narration.
    #[serde(default)]
    pub narration_flags: BTreeSet<QcFlag>,
}

impl Default for NarrationId {
    fn default() -> Self {
        Self(String::new())
    }
}

impl Validate for EnrichmentBundle {
    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure(!self.narration_id.0.is_empty(), "narration_id non-empty", || "empty narration_id".into())?;
        let mut present: Vec<String> = self.translations.keys().map(|l| format!("translate:{l}")).collect();
        if self.diacritized_chain.is_some() {
            present.push("diacritize:chain".into());
        }
        if self.diacritized_text.is_some() {
            present.push("diacritize:text".into());
        }
        if self.summary.is_some() {
            present.push("summarize".into());
        }
        if self.key_points.is_some() {
            present.push("key_points".into());
        }
        if self.tags.is_some() {
            present.push("tags".into());
        }
        for layer in present {
            let ok = matches!(self.provenance.get(&layer), Some(p) if p.status == LayerStatus::Ok);
            ensure(ok, "every stored layer has ok provenance", || format!("layer {layer} lacks ok provenance"))?;
        }
        Ok(())
    }
}

/// The seven languages named for the corpus, completed to twelve.
pub const DEFAULT_LANGUAGES: [&str; 12] = ["en", "fa", "tr", "ur", "fr", "es", "de", "ru", "zh", "id", "hi", "az"];

pub const DEFAULT_TAGS: [&str; 14] = [
    "belief",
    "charity",
    "ethics",
    "family",
    "fasting",
    "history",
    "jurisprudence",
    "knowledge",
    "pilgrimage",
    "prayer",
    "purity",
    "supplication",
    "trade",
    "worship",
];

/// Corpus-level settings checked into the corpus root as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub name: String,
    #[serde(default)]
    pub source: String,
    #[serde(default = "default_languages")]
    pub languages: Vec<String>,
    #[serde(default = "default_tags")]
    pub tag_vocabulary: Vec<String>,
    #[serde(default)]
    pub normalization: NormalizationProfile,
    /// Effective parameters of the last pipeline run.
    #[serde(default)]
    pub snapshot: BTreeMap<String, toml::Value>,
}

fn default_languages() -> Vec<String> {
    DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect()
}

fn default_tags() -> Vec<String> {
    DEFAULT_TAGS.iter().map(|s| s.to_string()).collect()
}

impl Default for CorpusManifest {
    fn default() -> Self {
        Self {
            name: "corpus".into(),
            source: String::new(),
            languages: default_languages(),
            tag_vocabulary: default_tags(),
            normalization: NormalizationProfile::default(),
            snapshot: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse manifest {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error(transparent)]
    Invalid(#[from] InvariantViolation),
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
        let manifest: Self = toml::from_str(&text)
            .map_err(|source| ManifestError::Parse { path: path.display().to_string(), source })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }
}

impl Validate for CorpusManifest {
    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure(!self.languages.is_empty(), "language list non-empty", || "no languages configured".into())?;
        let mut seen = BTreeSet::new();
        for lang in &self.languages {
            ensure(seen.insert(lang), "no duplicate language codes", || format!("duplicate language {lang}"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn narration() -> Narration {
        let book = BookId::from("b1");
        Narration {
            narration_id: NarrationId::derive(&book, 1, 0, "حدثنا علي", "الخير."),
            book_id: book,
            page_start: 1,
            page_end: 1,
            char_start: 0,
            char_end: 20,
            chain: "حدثنا علي قال".into(),
            separator: ": ".into(),
            text: "الخير.".into(),
            fidelity: 1.0,
            confidence: 1.0,
            missing_word_count: 0,
            qc_flags: BTreeSet::new(),
            group_id: None,
        }
    }

    #[test]
    fn derived_id_is_stable() {
        let a = NarrationId::derive(&BookId::from("b"), 3, 17, "c", "t");
        let b = NarrationId::derive(&BookId::from("b"), 3, 17, "c", "t");
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 16);
        // Pinned value guards against accidental changes to the derivation.
        assert_eq!(a.0, NarrationId::derive(&BookId::from("b"), 3, 17, "c", "t").0);
        assert_ne!(a, NarrationId::derive(&BookId::from("b"), 3, 18, "c", "t"));
        assert_ne!(a, NarrationId::derive(&BookId::from("b"), 3, 17, "ct", ""));
    }

    #[test]
    fn narration_offsets_checked() {
        let mut n = narration();
        assert!(n.validate().is_ok());
        n.char_start = 20;
        let err = n.validate().unwrap_err();
        assert_eq!(err.invariant, "char_start < char_end");
    }

    #[test]
    fn page_stream_maps_offsets() {
        let book = SourceBook {
            book_id: "b".into(),
            title: "t".into(),
            category: Category::Hadith,
            reclassified: false,
            pages: vec![
                SourcePage { page_no: 1, raw_text: String::new(), normalized_text: "ab".into() },
                SourcePage { page_no: 4, raw_text: String::new(), normalized_text: "cde".into() },
            ],
        };
        let s = book.stream();
        assert_eq!(s.slice(0, s.len()), "ab cde");
        assert_eq!(s.page_of(0), 1);
        assert_eq!(s.page_of(2), 1);
        assert_eq!(s.page_of(3), 4);
        assert_eq!(s.page_range(4), Some((3, 6)));
        assert_eq!(s.page_range(1), Some((0, 2)));
    }

    #[test]
    fn manifest_rejects_duplicate_languages() {
        let m = CorpusManifest { languages: vec!["en".into(), "en".into()], ..Default::default() };
        assert_eq!(m.validate().unwrap_err().invariant, "no duplicate language codes");
        let m = CorpusManifest { languages: vec![], ..Default::default() };
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_toml_round_trip() {
        let m = CorpusManifest::default();
        let back: CorpusManifest = toml::from_str(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.languages.len(), 12);
    }
}
