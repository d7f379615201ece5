use sha2::{Digest, Sha256};

use super::{AnnotationRequest, AnnotationResponse, AnnotationTask, AnnotatorClient, TransportError};
use crate::model::DEFAULT_TAGS;
use crate::segment::{RuleBackend, SegmenterBackend, OPENERS, QUOTE_VERBS};
use crate::similarity::HashingEmbedder;
use crate::text::{is_arabic_letter, words};

pub const MOCK_VERSION: &str = "mock-1";

const FATHA: char = '\u{064E}';
const SUKUN: char = '\u{0652}';

/// Deterministic annotator: every output is a pure function of the task and
/// the input text.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockAnnotator;

impl AnnotatorClient for MockAnnotator {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, request: &AnnotationRequest) -> Result<AnnotationResponse, TransportError> {
        Ok(AnnotationResponse {
            request_id: request.request_id.clone(),
            output: mock_output(&request.task, &request.input_text),
            model_version: MOCK_VERSION.into(),
        })
    }
}

fn latin(c: char) -> &'static str {
    match c {
        'ا' | 'أ' | 'إ' | 'آ' => "a",
        'ب' => "b",
        'ت' | 'ة' => "t",
        'ث' => "th",
        'ج' => "j",
        'ح' => "h",
        'خ' => "kh",
        'د' => "d",
        'ذ' => "dh",
        'ر' => "r",
        'ز' => "z",
        'س' => "s",
        'ش' => "sh",
        'ص' => "s",
        'ض' => "d",
        'ط' => "t",
        'ظ' => "z",
        'ع' => "'",
        'غ' => "gh",
        'ف' => "f",
        'ق' => "q",
        'ك' => "k",
        'ل' => "l",
        'م' => "m",
        'ن' => "n",
        'ه' => "h",
        'و' => "w",
        'ي' | 'ى' => "y",
        'ء' | 'ئ' | 'ؤ' => "'",
        _ => "",
    }
}

fn transliterate(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if is_arabic_letter(c) {
            out.push_str(latin(c));
        } else if c == '،' {
            out.push(',');
        } else if c == '؟' {
            out.push('?');
        } else {
            out.push(c);
        }
    }
    out
}

/// Persian/Urdu-style rendering: letter variants swapped, word order
/// reversed, so the output stays in Arabic script but differs from the input.
fn arabic_script_render(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| match c {
            'ي' => 'ی',
            'ك' => 'ک',
            'ه' => 'ہ',
            other => other,
        })
        .collect();
    let mut ws = words(&mapped);
    ws.reverse();
    ws.join(" ")
}

fn diacritize(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() * 2);
    for (i, &c) in chars.iter().enumerate() {
        out.push(c);
        if is_arabic_letter(c) {
            let word_final = chars.get(i + 1).is_none_or(|n| !is_arabic_letter(*n));
            out.push(if word_final { SUKUN } else { FATHA });
        }
    }
    out
}

const TAG_KEYWORDS: [(&str, &str); 22] = [
    ("الصلاة", "prayer"),
    ("صلاة", "prayer"),
    ("الصيام", "fasting"),
    ("صوم", "fasting"),
    ("الزكاة", "charity"),
    ("الصدقة", "charity"),
    ("العلم", "knowledge"),
    ("علم", "knowledge"),
    ("الحج", "pilgrimage"),
    ("الوضوء", "purity"),
    ("الطهارة", "purity"),
    ("الدعاء", "supplication"),
    ("البيع", "trade"),
    ("التجارة", "trade"),
    ("الوالدين", "family"),
    ("الجار", "family"),
    ("الصدق", "ethics"),
    ("الصبر", "ethics"),
    ("الخلق", "ethics"),
    ("الايمان", "belief"),
    ("العبادة", "worship"),
    ("الغزوة", "history"),
];

fn tags(text: &str) -> String {
    let ws = words(text);
    let mut found: Vec<&str> = TAG_KEYWORDS
        .iter()
        .filter(|(k, _)| ws.iter().any(|w| w.trim_matches(|c: char| !c.is_alphanumeric()) == *k))
        .map(|(_, t)| *t)
        .collect();
    if found.is_empty() {
        let digest = Sha256::digest(text.as_bytes());
        found.push(DEFAULT_TAGS[digest[0] as usize % DEFAULT_TAGS.len()]);
    }
    found.sort_unstable();
    found.dedup();
    found.join(",")
}

fn summarize(text: &str) -> String {
    let ws = words(text);
    let keep = if ws.len() <= 1 { ws.len() } else { ws.len() / 2 };
    ws[..keep].join(" ")
}

fn key_points(text: &str) -> String {
    text.split(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn looks_like_narration(text: &str) -> bool {
    let ws = words(text);
    let first = ws.first().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric())).unwrap_or("");
    OPENERS.contains(&first) || ws.iter().any(|w| QUOTE_VERBS.contains(&w.trim_matches(|c: char| !c.is_alphanumeric())))
}

/// The mock's answer for `(task, input)`.
pub fn mock_output(task: &AnnotationTask, input: &str) -> String {
    match task {
        AnnotationTask::Translate(lang) if super::ARABIC_SCRIPT_LANGUAGES.contains(&lang.as_str()) => {
            format!("[{lang}] {}", arabic_script_render(input))
        }
        AnnotationTask::Translate(lang) => format!("[{lang}] {}", transliterate(input)),
        AnnotationTask::Diacritize => diacritize(input),
        AnnotationTask::Summarize => summarize(input),
        AnnotationTask::KeyPoints => key_points(input),
        AnnotationTask::Tag => tags(input),
        AnnotationTask::ClassifyHadith => looks_like_narration(input).to_string(),
        AnnotationTask::SegmentWindow => {
            let verdict = RuleBackend.segment(input).expect("rule backend is infallible");
            serde_json::to_string(&verdict).expect("verdict serializes")
        }
        AnnotationTask::Embed => {
            serde_json::to_string(&HashingEmbedder::default().embed(input)).expect("vector serializes")
        }
    }
}
