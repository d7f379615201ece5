use super::AnnotationTask;
use crate::text::{arabic_script_ratio, strip_diacritics};

/// Target languages written in Arabic script; the script check for their
/// translations only requires the output to differ from the source.
pub const ARABIC_SCRIPT_LANGUAGES: [&str; 5] = ["fa", "ur", "ps", "ku", "sd"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QcVerdict {
    Pass,
    Flag(String),
}

impl QcVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Self::Pass)
    }
}

fn flag(reason: impl Into<String>) -> QcVerdict {
    QcVerdict::Flag(reason.into())
}

/// Task-specific sanity checks on an annotator's output.
pub fn qc_validate(task: &AnnotationTask, input: &str, output: &str, tag_vocabulary: &[String]) -> QcVerdict {
    match task {
        AnnotationTask::Diacritize => {
            if strip_diacritics(output) == strip_diacritics(input) {
                QcVerdict::Pass
            } else {
                flag("skeleton mismatch")
            }
        }
        AnnotationTask::Translate(lang) => {
            let out = output.trim();
            if out.is_empty() {
                return flag("empty translation");
            }
            let ratio = out.chars().count() as f64 / input.trim().chars().count().max(1) as f64;
            if !(0.3..=3.0).contains(&ratio) {
                return flag(format!("length ratio {ratio:.2} outside [0.3, 3.0]"));
            }
            if ARABIC_SCRIPT_LANGUAGES.contains(&lang.as_str()) {
                if out == input.trim() {
                    return flag("translation identical to source");
                }
            } else if arabic_script_ratio(out) >= 0.5 {
                return flag("translation still in source script");
            }
            QcVerdict::Pass
        }
        AnnotationTask::Tag => {
            let labels = parse_tags(output);
            if labels.is_empty() {
                return flag("no tags");
            }
            match labels.iter().find(|l| !tag_vocabulary.iter().any(|v| v == *l)) {
                Some(l) => flag(format!("tag `{l}` not in vocabulary")),
                None => QcVerdict::Pass,
            }
        }
        AnnotationTask::Summarize => {
            if output.trim().is_empty() {
                flag("empty summary")
            } else if output.chars().count() >= input.chars().count() {
                flag("summary not shorter than input")
            } else {
                QcVerdict::Pass
            }
        }
        AnnotationTask::KeyPoints => {
            if parse_key_points(output).is_empty() {
                flag("no key points")
            } else {
                QcVerdict::Pass
            }
        }
        AnnotationTask::ClassifyHadith => match output.trim() {
            "true" => QcVerdict::Pass,
            "false" => flag("non-hadith"),
            other => flag(format!("unexpected classification `{other}`")),
        },
        AnnotationTask::SegmentWindow | AnnotationTask::Embed => QcVerdict::Pass,
    }
}

pub(crate) fn parse_tags(output: &str) -> Vec<String> {
    let mut tags: Vec<String> = output.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
    tags.sort();
    tags.dedup();
    tags
}

pub(crate) fn parse_key_points(output: &str) -> Vec<String> {
    output.lines().map(|l| l.trim().trim_start_matches('-').trim().to_string()).filter(|l| !l.is_empty()).collect()
}
