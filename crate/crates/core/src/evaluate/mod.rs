//! Expert evaluation records and the statistics built from them.
//!
//! Naming note: "micro" here is the mean of per-narration error
//! percentages (every narration weighs the same) and "macro" is pooled
//! errors over pooled units (longer narrations weigh more). This is the
//! reverse of the usual machine-learning convention.

mod report;
mod stats;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use report::{build_report, render_csv, render_text, AggregateReport, DimensionRates, ReportFormat};
pub use stats::{
    apply_critical_filter, draw_sample, is_critical, macro_error_rate, micro_error_rate, CORE_DIMENSIONS,
    CRITICAL_THRESHOLD,
};

use crate::model::{ensure, InvariantViolation, NarrationId, Validate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationAspect {
    ChainTextSeparation,
    Summarization,
    Grouping,
    AnalyticalCommentary,
    ThematicTagging,
    KeyPoints,
    ThematicSimilarity,
    LexicalSimilarity,
    SemanticSimilarity,
}

impl EvaluationAspect {
    pub const ALL: [Self; 9] = [
        Self::ChainTextSeparation,
        Self::Summarization,
        Self::Grouping,
        Self::AnalyticalCommentary,
        Self::ThematicTagging,
        Self::KeyPoints,
        Self::ThematicSimilarity,
        Self::LexicalSimilarity,
        Self::SemanticSimilarity,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::ChainTextSeparation => "Chain/text separation",
            Self::Summarization => "Summarization",
            Self::Grouping => "Grouping of identical narrations",
            Self::AnalyticalCommentary => "Analytical commentary",
            Self::ThematicTagging => "Thematic tagging",
            Self::KeyPoints => "Key points",
            Self::ThematicSimilarity => "Thematic similarity",
            Self::LexicalSimilarity => "Lexical similarity",
            Self::SemanticSimilarity => "Semantic similarity",
        }
    }
}

impl fmt::Display for EvaluationAspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("aspect serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

/// Error dimensions. Units: word tokens for typos and missing words,
/// characters bearing or requiring marks for diacritization, sentences for
/// translation, assigned labels for tagging, listed points for key phrases
/// (which also absorbs summary errors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDimension {
    Typos,
    Translation,
    MissingWords,
    Tagging,
    KeyPhrases,
    DiacritizationChar,
}

impl ErrorDimension {
    pub const ALL: [Self; 6] =
        [Self::Typos, Self::Translation, Self::MissingWords, Self::Tagging, Self::KeyPhrases, Self::DiacritizationChar];

    pub fn label(self) -> &'static str {
        match self {
            Self::Typos => "Typos",
            Self::Translation => "Translation errors",
            Self::MissingWords => "Missing Arabic words",
            Self::Tagging => "Tagging errors",
            Self::KeyPhrases => "Key phrases",
            Self::DiacritizationChar => "Diacritization (char)",
        }
    }
}

impl fmt::Display for ErrorDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("dimension serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCount {
    pub error_units: u32,
    pub total_units: u32,
}

impl ErrorCount {
    pub fn new(error_units: u32, total_units: u32) -> Self {
        Self { error_units, total_units }
    }

    /// Error percentage; `total_units` must be positive.
    pub fn rate(&self) -> f64 {
        self.error_units as f64 / self.total_units as f64 * 100.0
    }
}

impl std::ops::Add for ErrorCount {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { error_units: self.error_units + o.error_units, total_units: self.total_units + o.total_units }
    }
}

/// One evaluator's judgement of one narration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationRecord {
    pub narration_id: NarrationId,
    pub evaluator_id: String,
    #[serde(default)]
    pub aspect_scores: BTreeMap<EvaluationAspect, f64>,
    #[serde(default)]
    pub error_counts: BTreeMap<ErrorDimension, ErrorCount>,
    #[serde(default)]
    pub is_non_hadith: bool,
    /// Dimension -> the upstream dimension whose error caused it.
    #[serde(default)]
    pub root_cause_links: BTreeMap<ErrorDimension, ErrorDimension>,
    #[serde(default)]
    pub free_notes: String,
}

impl EvaluationRecord {
    pub fn new(narration_id: impl Into<String>, evaluator_id: impl Into<String>) -> Self {
        Self {
            narration_id: NarrationId::new(narration_id),
            evaluator_id: evaluator_id.into(),
            aspect_scores: BTreeMap::new(),
            error_counts: BTreeMap::new(),
            is_non_hadith: false,
            root_cause_links: BTreeMap::new(),
            free_notes: String::new(),
        }
    }

    /// Store key: one record per (narration, evaluator); a resubmission
    /// replaces the earlier one.
    pub fn key(&self) -> String {
        format!("{}:{}", self.narration_id, self.evaluator_id)
    }

    /// Error counts with cascades removed: a dimension linked to an upstream
    /// cause contributes no error units; the root keeps its count.
    pub fn suppress_cascades(&self) -> BTreeMap<ErrorDimension, ErrorCount> {
        self.error_counts
            .iter()
            .map(|(dim, c)| {
                let units = if self.root_cause_links.contains_key(dim) { 0 } else { c.error_units };
                (*dim, ErrorCount::new(units, c.total_units))
            })
            .collect()
    }

    fn link_cycle(&self) -> Option<ErrorDimension> {
        for &start in self.root_cause_links.keys() {
            let mut cur = start;
            for _ in 0..=ErrorDimension::ALL.len() {
                match self.root_cause_links.get(&cur) {
                    Some(&next) if next == start => return Some(start),
                    Some(&next) => cur = next,
                    None => break,
                }
            }
        }
        None
    }
}

impl Validate for EvaluationRecord {
    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure(!self.narration_id.as_str().is_empty(), "narration_id non-empty", || "empty narration_id".into())?;
        ensure(!self.evaluator_id.is_empty(), "evaluator_id non-empty", || "empty evaluator_id".into())?;
        for (aspect, score) in &self.aspect_scores {
            ensure((0.0..=10.0).contains(score), "scores within [0,10]", || format!("{aspect} = {score}"))?;
        }
        for (dim, c) in &self.error_counts {
            ensure(c.total_units > 0, "total_units > 0", || format!("{dim} has zero total units"))?;
            ensure(c.error_units <= c.total_units, "0 <= error_units <= total_units", || {
                format!("{dim}: {} errors over {} units", c.error_units, c.total_units)
            })?;
        }
        if let Some(dim) = self.link_cycle() {
            return Err(InvariantViolation::new("root-cause links acyclic", format!("cycle through {dim}")));
        }
        Ok(())
    }
}
