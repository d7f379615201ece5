use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::text::{is_diacritic, TATWEEL};

/// Which normalization rules are applied to source pages and extracted text.
///
/// The profile is part of the corpus manifest; every stage that compares
/// text against the page stream must use the same profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationProfile {
    pub strip_diacritics_for_matching: bool,
    pub unify_alef_variants: bool,
    pub unify_ya_and_alef_maqsura: bool,
    pub remove_tatweel: bool,
    pub collapse_whitespace: bool,
    /// Page-number lines, footnote markers such as `(3)`, and footnote
    /// blocks introduced by a `___` separator line.
    pub strip_page_artifacts: bool,
}

impl Default for NormalizationProfile {
    fn default() -> Self {
        Self {
            strip_diacritics_for_matching: true,
            unify_alef_variants: true,
            unify_ya_and_alef_maqsura: true,
            remove_tatweel: true,
            collapse_whitespace: true,
            strip_page_artifacts: true,
        }
    }
}

impl NormalizationProfile {
    /// A profile that only applies NFC.
    pub fn none() -> Self {
        Self {
            strip_diacritics_for_matching: false,
            unify_alef_variants: false,
            unify_ya_and_alef_maqsura: false,
            remove_tatweel: false,
            collapse_whitespace: false,
            strip_page_artifacts: false,
        }
    }
}

const MAX_PASSES: usize = 8;

/// Normalizes `text` under `profile`.
///
/// NFC is applied first, then the enabled rules. Deleting a character can
/// bring a base letter and a mark together so that NFC composes them on the
/// next pass, so the passes repeat until the output is stable. This makes the
/// function idempotent by construction.
pub fn normalize(text: &str, profile: &NormalizationProfile) -> String {
    let mut current: String = text.nfc().collect();
    for _ in 0..MAX_PASSES {
        let next: String = apply_rules(&current, profile).nfc().collect();
        if next == current {
            return next;
        }
        current = next;
    }
    current
}

fn apply_rules(text: &str, profile: &NormalizationProfile) -> String {
    let stripped;
    let text = if profile.strip_page_artifacts {
        stripped = strip_page_artifacts(text);
        stripped.as_str()
    } else {
        text
    };

    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if profile.strip_diacritics_for_matching && is_diacritic(c) {
            continue;
        }
        if profile.remove_tatweel && c == TATWEEL {
            continue;
        }
        let c = match c {
            '\u{0622}' | '\u{0623}' | '\u{0625}' | '\u{0671}' | '\u{0672}' | '\u{0673}'
                if profile.unify_alef_variants =>
            {
                '\u{0627}'
            }
            '\u{0649}' | '\u{06CC}' if profile.unify_ya_and_alef_maqsura => '\u{064A}',
            other => other,
        };
        out.push(c);
    }

    if profile.collapse_whitespace {
        out.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        out
    }
}

fn is_digit(c: char) -> bool {
    c.is_ascii_digit() || ('\u{0660}'..='\u{0669}').contains(&c) || ('\u{06F0}'..='\u{06F9}').contains(&c)
}

fn is_page_number_line(line: &str) -> bool {
    let core = line.trim().trim_matches(|c: char| {
        matches!(c, '-' | '\u{2013}' | '\u{2014}' | '(' | ')' | '[' | ']') || c.is_whitespace()
    });
    !core.is_empty() && core.chars().all(is_digit)
}

fn is_footnote_separator(line: &str) -> bool {
    let t = line.trim();
    t.chars().count() >= 3 && t.chars().all(|c| c == '_')
}

/// Drops page-number lines and footnote blocks, then removes inline
/// footnote markers like `(12)` or `[3]`.
fn strip_page_artifacts(text: &str) -> String {
    let mut kept: Vec<&str> = Vec::new();
    for line in text.split('\n') {
        if is_footnote_separator(line) {
            break;
        }
        if is_page_number_line(line) {
            continue;
        }
        kept.push(line);
    }
    remove_inline_markers(&kept.join("\n"))
}

fn remove_inline_markers(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '(' || c == '[' {
            let close = if c == '(' { ')' } else { ']' };
            let mut j = i + 1;
            while j < chars.len() && j - i <= 3 && is_digit(chars[j]) {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j] == close {
                i = j + 1;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    out
}
