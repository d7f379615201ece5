use serde::{Deserialize, Serialize};

use crate::enrich::{AnnotationRequest, AnnotationTask, Annotator};
use crate::text::is_sentence_delimiter;

/// Half-open char range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn shift(self, by: usize) -> Self {
        Self { start: self.start + by, end: self.end + by }
    }
}

/// One narration (or rejected non-narration block) found in a window.
/// A non-narration block has an empty chain span at its start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSpan {
    pub chain: Span,
    pub text: Span,
    pub is_hadith: bool,
    pub confidence: f64,
}

impl VerdictSpan {
    pub fn full(&self) -> Span {
        Span::new(self.chain.start, self.text.end)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmenterVerdict {
    pub spans: Vec<VerdictSpan>,
}

impl SegmenterVerdict {
    /// Checks offsets against a window of `len` chars: chain before text,
    /// spans ordered and non-overlapping, confidences in range.
    pub fn check(&self, len: usize) -> Result<(), String> {
        let mut prev_end = 0;
        for (i, s) in self.spans.iter().enumerate() {
            if s.chain.start > s.chain.end || s.text.start > s.text.end || s.chain.end > s.text.start {
                return Err(format!("span {i}: chain must precede text"));
            }
            if s.text.is_empty() {
                return Err(format!("span {i}: empty text"));
            }
            if s.text.end > len {
                return Err(format!("span {i}: ends at {} beyond window length {len}", s.text.end));
            }
            if s.chain.start < prev_end {
                return Err(format!("span {i}: overlaps or precedes the previous span"));
            }
            if !(0.0..=1.0).contains(&s.confidence) {
                return Err(format!("span {i}: confidence {} outside [0,1]", s.confidence));
            }
            prev_end = s.text.end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("segmenter backend failed: {0}")]
pub struct BackendError(pub String);

/// Finds narration boundaries and chain/text splits in a window of text.
/// Offsets in the verdict are char offsets into `window_text`.
pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> &str;
    fn segment(&self, window_text: &str) -> Result<SegmenterVerdict, BackendError>;
}

/// Transmission formulas that open a narration (normalized spelling).
pub const OPENERS: [&str; 10] =
    ["حدثنا", "حدثني", "اخبرنا", "اخبرني", "انبانا", "وحدثنا", "وحدثني", "واخبرنا", "واخبرني", "وانبانا"];
/// Words introducing the quoted main text.
pub const QUOTE_VERBS: [&str; 5] = ["قال", "قالت", "قالا", "قالوا", "يقول"];
/// Words that open chapter headings.
pub const HEADINGS: [&str; 2] = ["باب", "كتاب"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SentenceKind {
    Opener,
    Heading,
    Continuation,
}

/// Deterministic segmenter keyed on transmission-formula markers.
///
/// A narration starts at a sentence whose first word is an opener formula
/// and runs until the next opener or heading. The chain ends at the last
/// quote verb before the first colon of the opening sentence (the longest
/// chain wins when several quote verbs qualify). Text before the first
/// opener or heading of the window is left to the previous window.
#[derive(Debug, Clone, Default)]
pub struct RuleBackend;

fn word_ranges(chars: &[char], start: usize, end: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = start;
    while i < end {
        while i < end && chars[i].is_whitespace() {
            i += 1;
        }
        let s = i;
        while i < end && !chars[i].is_whitespace() {
            i += 1;
        }
        if s < i {
            // Trim punctuation off the word core.
            let mut a = s;
            let mut b = i;
            while a < b && !chars[a].is_alphanumeric() {
                a += 1;
            }
            while b > a && !chars[b - 1].is_alphanumeric() {
                b -= 1;
            }
            if a < b {
                out.push((a, b));
            }
        }
    }
    out
}

fn word_eq(chars: &[char], (s, e): (usize, usize), w: &str) -> bool {
    e - s == w.chars().count() && chars[s..e].iter().copied().eq(w.chars())
}

fn sentences(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    let n = chars.len();
    loop {
        while i < n && chars[i].is_whitespace() {
            i += 1;
        }
        if i >= n {
            break;
        }
        let s = i;
        while i < n && !is_sentence_delimiter(chars[i]) {
            i += 1;
        }
        let mut e = if i < n { i + 1 } else { n };
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        out.push((s, e));
        i = if i < n { i + 1 } else { n };
    }
    out
}

impl RuleBackend {
    fn classify(chars: &[char], sentence: (usize, usize)) -> SentenceKind {
        match word_ranges(chars, sentence.0, sentence.1).first() {
            Some(&w) if OPENERS.iter().any(|o| word_eq(chars, w, o)) => SentenceKind::Opener,
            Some(&w) if HEADINGS.iter().any(|h| word_eq(chars, w, h)) => SentenceKind::Heading,
            _ => SentenceKind::Continuation,
        }
    }

    /// Splits a narration starting at `first_sentence` into chain and text.
    fn split(chars: &[char], first_sentence: (usize, usize), end: usize) -> VerdictSpan {
        let (s, e) = first_sentence;
        let colon = (s..e).find(|&i| chars[i] == ':');
        let search_end = colon.unwrap_or(e);
        let candidates: Vec<(usize, usize)> = word_ranges(chars, s, search_end)
            .into_iter()
            .skip(1)
            .filter(|w| QUOTE_VERBS.iter().any(|q| word_eq(chars, *w, q)))
            .collect();
        let whole_as_text =
            VerdictSpan { chain: Span::new(s, s), text: Span::new(s, end), is_hadith: true, confidence: 0.3 };
        let Some(&(_, chain_end)) = candidates.last() else {
            return whole_as_text;
        };
        let mut text_start = chain_end;
        while text_start < end && (chars[text_start].is_whitespace() || chars[text_start] == ':') {
            text_start += 1;
        }
        if text_start >= end {
            return whole_as_text;
        }
        let colon_follows = colon.is_some() && chars[chain_end..text_start].contains(&':');
        let confidence = match (candidates.len(), colon_follows) {
            (_, true) => 1.0,
            (1, false) => 0.9,
            _ => 0.6,
        };
        VerdictSpan { chain: Span::new(s, chain_end), text: Span::new(text_start, end), is_hadith: true, confidence }
    }
}

impl SegmenterBackend for RuleBackend {
    fn name(&self) -> &str {
        "rule"
    }

    fn segment(&self, window_text: &str) -> Result<SegmenterVerdict, BackendError> {
        let chars: Vec<char> = window_text.chars().collect();
        let sents = sentences(&chars);
        let mut spans = Vec::new();
        // (kind, first sentence, end of last sentence)
        let mut open: Option<(SentenceKind, (usize, usize), usize)> = None;
        let close = |open: (SentenceKind, (usize, usize), usize), spans: &mut Vec<VerdictSpan>| {
            let (kind, first, end) = open;
            if kind == SentenceKind::Opener {
                spans.push(Self::split(&chars, first, end));
            } else {
                spans.push(VerdictSpan {
                    chain: Span::new(first.0, first.0),
                    text: Span::new(first.0, end),
                    is_hadith: false,
                    confidence: 1.0,
                });
            }
        };
        for sent in sents {
            match Self::classify(&chars, sent) {
                SentenceKind::Continuation => {
                    if let Some(o) = open.as_mut() {
                        o.2 = sent.1;
                    }
                }
                kind => {
                    if let Some(o) = open.take() {
                        close(o, &mut spans);
                    }
                    open = Some((kind, sent, sent.1));
                }
            }
        }
        if let Some(o) = open.take() {
            close(o, &mut spans);
        }
        Ok(SegmenterVerdict { spans })
    }
}

/// Segmenter that delegates to an annotator service (`segment_window`
/// task). The annotator's output is a JSON-encoded [`SegmenterVerdict`].
pub struct AnnotatorSegmenter {
    annotator: Annotator,
    counter: std::sync::atomic::AtomicU64,
}

impl AnnotatorSegmenter {
    pub fn new(annotator: Annotator) -> Self {
        Self { annotator, counter: Default::default() }
    }
}

impl SegmenterBackend for AnnotatorSegmenter {
    fn name(&self) -> &str {
        self.annotator.name()
    }

    fn segment(&self, window_text: &str) -> Result<SegmenterVerdict, BackendError> {
        let n = self.counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let request = AnnotationRequest::new(format!("segment-{n}"), AnnotationTask::SegmentWindow, window_text);
        let annotation = self.annotator.annotate(&request).map_err(|f| BackendError(f.reason))?;
        serde_json::from_str(&annotation.output).map_err(|e| BackendError(format!("malformed verdict: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text_of(s: &str, span: Span) -> String {
        s.chars().skip(span.start).take(span.len()).collect()
    }

    #[test]
    fn chain_and_text_split_on_marker_grammar() {
        let w = "حدثنا علي عن محمد قال: الصبر مفتاح الفرج.";
        let v = RuleBackend.segment(w).unwrap();
        assert_eq!(v.spans.len(), 1);
        let s = &v.spans[0];
        assert!(s.is_hadith);
        assert_eq!(text_of(w, s.chain), "حدثنا علي عن محمد قال");
        assert_eq!(text_of(w, s.text), "الصبر مفتاح الفرج.");
        assert_eq!(s.confidence, 1.0);
    }

    #[test]
    fn heading_only_is_not_hadith() {
        let w = "باب فضل العلم.";
        let v = RuleBackend.segment(w).unwrap();
        assert_eq!(v.spans.len(), 1);
        assert!(!v.spans[0].is_hadith);
        assert_eq!(text_of(w, v.spans[0].text), w);
        assert!(v.spans[0].chain.is_empty());
    }

    #[test]
    fn longest_chain_wins() {
        let w = "حدثنا علي قال حدثنا محمد عن ابيه قال: العلم نور. وهو خير كثير.";
        let v = RuleBackend.segment(w).unwrap();
        let s = &v.spans[0];
        assert_eq!(text_of(w, s.chain), "حدثنا علي قال حدثنا محمد عن ابيه قال");
        assert_eq!(text_of(w, s.text), "العلم نور. وهو خير كثير.");
    }

    #[test]
    fn ambiguous_without_colon_is_low_confidence() {
        let w = "حدثنا علي قال حدثنا محمد قال العلم نور.";
        let s = &RuleBackend.segment(w).unwrap().spans[0];
        assert_eq!(text_of(w, s.chain), "حدثنا علي قال حدثنا محمد قال");
        assert!(s.confidence < 0.7);
    }

    #[test]
    fn leading_orphan_text_skipped_and_multiple_narrations() {
        let w = "بقية كلام سابق. حدثنا علي قال: الاول. باب الثاني. حدثنا محمد قال: الثاني. وتكملته.";
        let v = RuleBackend.segment(w).unwrap();
        v.check(w.chars().count()).unwrap();
        assert_eq!(v.spans.len(), 3);
        assert!(v.spans[0].is_hadith && !v.spans[1].is_hadith && v.spans[2].is_hadith);
        assert_eq!(text_of(w, v.spans[2].text), "الثاني. وتكملته.");
    }

    #[test]
    fn no_markers_yields_empty_verdict() {
        assert!(RuleBackend.segment("كلام بلا اسناد. وتكملة.").unwrap().spans.is_empty());
    }

    #[test]
    fn check_rejects_overlap() {
        let v = SegmenterVerdict {
            spans: vec![
                VerdictSpan { chain: Span::new(0, 2), text: Span::new(3, 10), is_hadith: true, confidence: 1.0 },
                VerdictSpan { chain: Span::new(5, 6), text: Span::new(7, 9), is_hadith: true, confidence: 1.0 },
            ],
        };
        assert!(v.check(20).is_err());
    }
}
