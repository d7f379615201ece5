//! Narration segmentation: semantic units, overlapping windows, a pluggable
//! backend per window, and stitching of the per-window verdicts.

mod backend;
mod units;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backend::{
    AnnotatorSegmenter, BackendError, RuleBackend, SegmenterBackend, SegmenterVerdict, Span, VerdictSpan, HEADINGS,
    OPENERS, QUOTE_VERBS,
};
pub use units::{plan_windows, unitize, SemanticUnit, Window, MIN_UNIT_CHARS};

use crate::model::{BookId, Narration, NarrationId, PageStream, QcFlag, SourceBook};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub window_units: usize,
    pub overlap_units: usize,
    pub max_unit_chars: usize,
    /// Recovery windows grow up to this multiple of `window_units`.
    pub max_recovery_factor: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { window_units: 12, overlap_units: 3, max_unit_chars: 400, max_recovery_factor: 8 }
    }
}

/// A window whose content the backend could not account for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedWindow {
    pub book_id: BookId,
    pub first_unit: usize,
    pub last_unit: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub reason: String,
}

impl UnresolvedWindow {
    pub fn key(&self) -> String {
        format!("{}:{}-{}", self.book_id, self.first_unit, self.last_unit)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SegmentOutcome {
    pub narrations: Vec<Narration>,
    pub unresolved: Vec<UnresolvedWindow>,
    pub windows: usize,
    pub recovery_windows: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    span: VerdictSpan,
    truncated: bool,
    interior: usize,
}

impl Candidate {
    fn full(&self) -> Span {
        self.span.full()
    }
}

struct WindowRun {
    candidates: Result<Vec<Candidate>, String>,
}

fn content_end(chars: &[char], start: usize, end: usize) -> usize {
    let mut e = end;
    while e > start && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    e
}

fn run_window(stream: &PageStream, units: &[SemanticUnit], w: Window, backend: &dyn SegmenterBackend) -> WindowRun {
    let (start, end) = w.char_range(units);
    let text = stream.slice(start, end);
    let is_final = w.last_unit + 1 == units.len();
    let verdict = match backend.segment(&text) {
        Ok(v) => v,
        Err(e) => return WindowRun { candidates: Err(e.0) },
    };
    if let Err(e) = verdict.check(end - start) {
        return WindowRun { candidates: Err(format!("invalid verdict: {e}")) };
    }
    let c_end = content_end(&stream.chars, start, end);
    let candidates = verdict
        .spans
        .into_iter()
        .map(|s| {
            let span = VerdictSpan { chain: s.chain.shift(start), text: s.text.shift(start), ..s };
            let full = span.full();
            Candidate {
                truncated: !is_final && full.end >= c_end,
                interior: (full.start - start).min(end - full.end),
                span,
            }
        })
        .collect();
    WindowRun { candidates: Ok(candidates) }
}

/// Segments one book. Windows are processed in parallel; the result is
/// independent of scheduling.
pub fn segment_book(book: &SourceBook, backend: &dyn SegmenterBackend, cfg: &SegmentConfig) -> SegmentOutcome {
    let stream = book.stream();
    let units = unitize(&stream, cfg.max_unit_chars);
    let windows = plan_windows(units.len(), cfg.window_units, cfg.overlap_units);
    let runs: Vec<WindowRun> = windows.par_iter().map(|w| run_window(&stream, &units, *w, backend)).collect();

    let mut pool: Vec<Candidate> = Vec::new();
    let mut unresolved = Vec::new();
    let mut empty_windows = Vec::new();
    let mut recovery_windows = 0;
    let mut recovered = BTreeSet::new();
    for (i, (w, run)) in windows.iter().zip(&runs).enumerate() {
        let (ws, we) = w.char_range(&units);
        match &run.candidates {
            Err(reason) => unresolved.push(UnresolvedWindow {
                book_id: book.book_id.clone(),
                first_unit: w.first_unit,
                last_unit: w.last_unit,
                char_start: ws,
                char_end: we,
                reason: reason.clone(),
            }),
            Ok(cands) => {
                if cands.is_empty() {
                    empty_windows.push(*w);
                }
                for c in cands {
                    pool.push(c.clone());
                    let Some(next) = windows.get(i + 1) else { continue };
                    let next_start = units[next.first_unit].char_start;
                    if c.truncated && c.full().start < next_start && recovered.insert(c.full().start) {
                        let (cand, attempts) = recover(&stream, &units, c.full().start, backend, cfg);
                        recovery_windows += attempts;
                        pool.extend(cand);
                    }
                }
            }
        }
    }

    let accepted = stitch(pool);
    let narrations: Vec<Narration> =
        accepted.into_iter().map(|(c, flags)| to_narration(&book.book_id, &stream, &c, flags)).collect();

    for w in empty_windows {
        let (ws, we) = w.char_range(&units);
        let covered: Vec<(usize, usize)> = narrations.iter().map(|n| (n.char_start, n.char_end)).collect();
        if has_uncovered_content(&stream.chars, ws, we, &covered) {
            unresolved.push(UnresolvedWindow {
                book_id: book.book_id.clone(),
                first_unit: w.first_unit,
                last_unit: w.last_unit,
                char_start: ws,
                char_end: we,
                reason: "backend returned no spans".into(),
            });
        }
    }
    unresolved.sort_by_key(|u| u.first_unit);
    SegmentOutcome { narrations, unresolved, windows: windows.len(), recovery_windows }
}

/// Re-segments from the unit containing `start` with windows of growing
/// size until the narration starting there is no longer cut off.
fn recover(
    stream: &PageStream,
    units: &[SemanticUnit],
    start: usize,
    backend: &dyn SegmenterBackend,
    cfg: &SegmentConfig,
) -> (Option<Candidate>, usize) {
    let anchor = units.partition_point(|u| u.char_end <= start);
    let max = cfg.window_units * cfg.max_recovery_factor.max(1);
    let mut size = cfg.window_units * 2;
    let mut attempts = 0;
    let mut best = None;
    loop {
        let last = (anchor + size - 1).min(units.len() - 1);
        let w = Window { first_unit: anchor, last_unit: last, overlap_units: 0 };
        attempts += 1;
        if let Ok(cands) = run_window(stream, units, w, backend).candidates {
            best = cands.into_iter().find(|c| c.full().start == start);
        }
        let done = matches!(&best, Some(c) if !c.truncated);
        if done || last + 1 == units.len() || size >= max {
            return (best, attempts);
        }
        size = (size * 2).min(max);
    }
}

fn rank(c: &Candidate) -> (bool, usize, usize, std::cmp::Reverse<usize>) {
    (!c.truncated, c.interior, c.full().len(), std::cmp::Reverse(c.full().start))
}

fn overlaps(a: Span, b: Span) -> bool {
    a.start < b.end && b.start < a.end
}

/// Resolves overlapping candidates from different windows. Within each
/// cluster of overlapping spans the best-placed candidate is accepted
/// (complete over cut off, then furthest from its window's edges, then
/// longest, then earliest) and everything overlapping it is dropped.
fn stitch(mut pool: Vec<Candidate>) -> Vec<(Candidate, BTreeSet<QcFlag>)> {
    pool.sort_by_key(|c| (c.full().start, c.full().end));
    let mut accepted = Vec::new();
    let mut i = 0;
    while i < pool.len() {
        let mut j = i + 1;
        let mut reach = pool[i].full().end;
        while j < pool.len() && pool[j].full().start < reach {
            reach = reach.max(pool[j].full().end);
            j += 1;
        }
        let mut cluster: Vec<Candidate> = pool[i..j].to_vec();
        while !cluster.is_empty() {
            let best_idx = (0..cluster.len()).max_by_key(|&k| rank(&cluster[k])).expect("non-empty");
            let best = cluster.swap_remove(best_idx);
            let mut flags = BTreeSet::new();
            if best.truncated {
                flags.insert(QcFlag::TruncationSuspect);
            }
            let contested = cluster.iter().any(|c| {
                overlaps(c.full(), best.full())
                    && !c.truncated
                    && !best.truncated
                    && c.interior == best.interior
                    && (c.span.chain != best.span.chain || c.span.text != best.span.text)
            });
            if contested {
                flags.insert(QcFlag::TruncationSuspect);
            }
            cluster.retain(|c| !overlaps(c.full(), best.full()));
            accepted.push((best, flags));
        }
        i = j;
    }
    accepted.sort_by_key(|(c, _)| c.full().start);
    accepted
}

fn to_narration(book_id: &BookId, stream: &PageStream, c: &Candidate, mut flags: BTreeSet<QcFlag>) -> Narration {
    let s = &c.span;
    let chain = stream.slice(s.chain.start, s.chain.end);
    let separator = stream.slice(s.chain.end, s.text.start);
    let text = stream.slice(s.text.start, s.text.end);
    let page_start = stream.page_of(s.chain.start);
    let page_end = stream.page_of(s.text.end - 1);
    if !s.is_hadith {
        flags.insert(QcFlag::NonHadithSuspect);
    }
    Narration {
        narration_id: NarrationId::derive(book_id, page_start, s.chain.start, &chain, &text),
        book_id: book_id.clone(),
        page_start,
        page_end,
        char_start: s.chain.start,
        char_end: s.text.end,
        chain,
        separator,
        text,
        fidelity: 1.0,
        confidence: s.confidence,
        missing_word_count: 0,
        qc_flags: flags,
        group_id: None,
    }
}

fn has_uncovered_content(chars: &[char], start: usize, end: usize, covered: &[(usize, usize)]) -> bool {
    (start..end).any(|i| !chars[i].is_whitespace() && !covered.iter().any(|&(s, e)| s <= i && i < e))
}

/// Maximal runs of `[0, len)` not covered by any narration that contain
/// non-whitespace text.
pub fn uncovered_gaps(stream: &PageStream, narrations: &[Narration]) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = narrations.iter().map(|n| (n.char_start, n.char_end)).collect();
    spans.sort();
    let mut gaps = Vec::new();
    let mut pos = 0;
    let mut push = |s: usize, e: usize| {
        if stream.chars[s..e].iter().any(|c| !c.is_whitespace()) {
            gaps.push((s, e));
        }
    };
    for (s, e) in spans {
        if s > pos {
            push(pos, s);
        }
        pos = pos.max(e);
    }
    if pos < stream.len() {
        push(pos, stream.len());
    }
    gaps
}
