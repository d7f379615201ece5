//! Fuzzy alignment of narrations against their source page streams.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{Narration, PageStream, QcFlag, SourceBook};
use crate::text::{is_diacritic, words};

/// Levenshtein distance over chars (unit costs), two-row DP.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)`, with two empty strings scoring 1.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOps {
    pub insert: usize,
    pub delete: usize,
    pub substitute: usize,
}

impl EditOps {
    pub fn total(&self) -> usize {
        self.insert + self.delete + self.substitute
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub fidelity: f64,
    pub page_start: u32,
    pub page_end: u32,
    /// Offsets into the book's normalized page stream.
    pub char_start: usize,
    pub char_end: usize,
    pub missing_word_count: u32,
    /// Operations turning the narration into the source span.
    pub edit_ops: EditOps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub min_fidelity: f64,
    /// Extra search room around a candidate, as a fraction of the narration
    /// length.
    pub slack: f64,
    /// Diagonal bucket width for candidate voting.
    pub stride: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { min_fidelity: 0.8, slack: 0.15, stride: 32 }
    }
}

const Q: usize = 3;

/// Diacritic-stripped page stream with a trigram index, reusable across
/// queries against the same book.
pub struct BookIndex {
    stream: PageStream,
    chars: Vec<char>,
    /// `origin[i]` is the stream offset of `chars[i]`; one extra entry for
    /// the end.
    origin: Vec<usize>,
    grams: HashMap<[char; Q], Vec<u32>>,
}

impl BookIndex {
    pub fn new(book: &SourceBook) -> Self {
        Self::from_stream(book.stream())
    }

    pub fn from_stream(stream: PageStream) -> Self {
        let mut chars = Vec::with_capacity(stream.len());
        let mut origin = Vec::with_capacity(stream.len() + 1);
        for (i, &c) in stream.chars.iter().enumerate() {
            if !is_diacritic(c) {
                chars.push(c);
                origin.push(i);
            }
        }
        origin.push(stream.len());
        let mut grams: HashMap<[char; Q], Vec<u32>> = HashMap::new();
        for (p, w) in chars.windows(Q).enumerate() {
            grams.entry([w[0], w[1], w[2]]).or_default().push(p as u32);
        }
        Self { stream, chars, origin, grams }
    }

    pub fn stream(&self) -> &PageStream {
        &self.stream
    }

    fn stripped_offset(&self, stream_offset: usize) -> usize {
        self.origin.partition_point(|&o| o < stream_offset)
    }

    /// Candidate text regions `[start, end)` in stripped coordinates, most
    /// promising first.
    fn candidate_regions(&self, query: &[char], max_edits: usize, cfg: &AlignConfig) -> Vec<(usize, usize)> {
        let n = self.chars.len();
        let m = query.len();
        let pad = max_edits + (cfg.slack * m as f64).ceil() as usize;
        let threshold = (m + 1) as i64 - (Q * (max_edits + 1)) as i64;
        if threshold <= 0 || m < Q {
            return vec![(0, n)];
        }
        let stride = cfg.stride.max(1) as i64;
        // bucket -> (distinct query positions, last position counted)
        let mut votes: HashMap<i64, (usize, usize)> = HashMap::new();
        for i in 0..=m - Q {
            let Some(hits) = self.grams.get(&[query[i], query[i + 1], query[i + 2]]) else { continue };
            for &p in hits {
                let diag = p as i64 - i as i64;
                let entry = votes.entry(diag.div_euclid(stride)).or_insert((0, usize::MAX));
                if entry.1 != i {
                    *entry = (entry.0 + 1, i);
                }
            }
        }
        let reach = (max_edits as i64 + stride - 1) / stride + 1;
        let mut scored: Vec<(usize, i64)> = votes
            .keys()
            .map(|&b| ((b - reach..=b + reach).filter_map(|x| votes.get(&x)).map(|v| v.0).sum(), b))
            .filter(|(s, _)| *s as i64 >= threshold)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut regions: Vec<(usize, usize, usize)> = Vec::new();
        for (score, b) in scored {
            let lo = (b * stride - pad as i64).max(0) as usize;
            let hi = ((b + 1) * stride + (m + pad) as i64).clamp(0, n as i64) as usize;
            if lo >= hi {
                continue;
            }
            if let Some(r) = regions.iter_mut().find(|r| lo < r.1 && r.0 < hi) {
                r.0 = r.0.min(lo);
                r.1 = r.1.max(hi);
                r.2 = r.2.max(score);
            } else {
                regions.push((lo, hi, score));
            }
        }
        // Merging can chain; collapse until stable.
        regions.sort_by_key(|r| r.0);
        let mut merged: Vec<(usize, usize, usize)> = Vec::new();
        for r in regions {
            match merged.last_mut() {
                Some(last) if r.0 < last.1 => {
                    last.1 = last.1.max(r.1);
                    last.2 = last.2.max(r.2);
                }
                _ => merged.push(r),
            }
        }
        merged.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
        merged.into_iter().map(|(lo, hi, _)| (lo, hi)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    fidelity: f64,
    start: usize,
    end: usize,
}

/// Semi-global DP: the query must be consumed entirely, the text span is
/// free. Returns the best-fidelity span per the tie rules.
fn best_in_region(query: &[char], text: &[char], base: usize, hint: Option<usize>) -> Option<Hit> {
    let m = query.len();
    let mut cost: Vec<usize> = vec![0; text.len() + 1];
    let mut start: Vec<usize> = (0..=text.len()).collect();
    let mut next_cost = vec![0; text.len() + 1];
    let mut next_start = vec![0; text.len() + 1];
    for (i, &qc) in query.iter().enumerate() {
        next_cost[0] = i + 1;
        next_start[0] = 0;
        for j in 1..=text.len() {
            let diag = cost[j - 1] + usize::from(qc != text[j - 1]);
            let up = cost[j] + 1;
            let left = next_cost[j - 1] + 1;
            let (c, s) = if diag <= up && diag <= left {
                (diag, start[j - 1])
            } else if up <= left {
                (up, start[j])
            } else {
                (left, next_start[j - 1])
            };
            next_cost[j] = c;
            next_start[j] = s;
        }
        std::mem::swap(&mut cost, &mut next_cost);
        std::mem::swap(&mut start, &mut next_start);
    }
    let mut best: Option<Hit> = None;
    for j in 0..=text.len() {
        let len = j - start[j];
        let denom = m.max(len);
        if denom == 0 {
            continue;
        }
        let hit = Hit { fidelity: 1.0 - cost[j] as f64 / denom as f64, start: base + start[j], end: base + j };
        if better(&hit, best.as_ref(), hint) {
            best = Some(hit);
        }
    }
    best
}

fn better(a: &Hit, b: Option<&Hit>, hint: Option<usize>) -> bool {
    let Some(b) = b else { return true };
    if (a.fidelity - b.fidelity).abs() > 1e-12 {
        return a.fidelity > b.fidelity;
    }
    if let Some(h) = hint {
        let (da, db) = (a.start.abs_diff(h), b.start.abs_diff(h));
        if da != db {
            return da < db;
        }
    }
    (a.start, a.end) < (b.start, b.end)
}

/// Edit operations turning `a` into `b` along one optimal path.
pub fn edit_ops(a: &[char], b: &[char]) -> EditOps {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            d[i][j] = (d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1])).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = EditOps::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            if a[i - 1] != b[j - 1] {
                ops.substitute += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.delete += 1;
            i -= 1;
        } else {
            ops.insert += 1;
            j -= 1;
        }
    }
    ops
}

/// Number of source words left unmatched by a word-level alignment of the
/// narration against its source span. Substituted words count as present.
pub fn missing_words(narration: &str, source: &str) -> u32 {
    let a = words(narration);
    let b = words(source);
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            d[i][j] = (d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1])).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j, mut missing) = (n, m, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            missing += 1;
            j -= 1;
        } else {
            i -= 1;
        }
    }
    missing
}

/// Finds the best-matching span for `narration` in the book. `hint` is a
/// stream offset used to break ties between equally good spans. Returns
/// `None` when no span reaches `cfg.min_fidelity`.
pub fn locate(narration: &str, index: &BookIndex, cfg: &AlignConfig, hint: Option<usize>) -> Option<AlignmentResult> {
    let query: Vec<char> = narration.chars().filter(|c| !is_diacritic(*c)).collect();
    if query.is_empty() || index.chars.is_empty() {
        return None;
    }
    let min_fid = cfg.min_fidelity.clamp(1e-6, 1.0);
    let max_edits = ((1.0 - min_fid) * query.len() as f64 / min_fid).floor() as usize;
    let hint = hint.map(|h| index.stripped_offset(h));
    let mut best: Option<Hit> = None;
    for (lo, hi) in index.candidate_regions(&query, max_edits, cfg) {
        if let Some(hit) = best_in_region(&query, &index.chars[lo..hi], lo, hint) {
            if better(&hit, best.as_ref(), hint) {
                best = Some(hit);
            }
        }
    }
    let hit = best.filter(|h| h.fidelity + 1e-12 >= cfg.min_fidelity)?;
    let span = &index.chars[hit.start..hit.end];
    let char_start = index.origin[hit.start];
    // Marks trailing the last matched letter belong to the span.
    let char_end = index.origin[hit.end];
    let stream = &index.stream;
    let source: String = span.iter().collect();
    let query_text: String = query.iter().collect();
    Some(AlignmentResult {
        fidelity: hit.fidelity,
        page_start: stream.page_of(char_start),
        page_end: stream.page_of(char_end.saturating_sub(1).max(char_start)),
        char_start,
        char_end,
        missing_word_count: missing_words(&query_text, &source),
        edit_ops: edit_ops(&query, span),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlignStats {
    pub aligned: usize,
    pub low_fidelity: usize,
}

/// Aligns one narration in place: coordinates and fidelity come from the
/// best span; below the threshold the narration keeps its coordinates, gets
/// the similarity to its recorded span, and is flagged `low_fidelity`.
pub fn align_narration(n: &mut Narration, index: &BookIndex, cfg: &AlignConfig) -> bool {
    let full = n.full_text();
    match locate(&full, index, cfg, Some(n.char_start)) {
        Some(r) => {
            n.fidelity = r.fidelity;
            n.page_start = r.page_start;
            n.page_end = r.page_end;
            n.char_start = r.char_start;
            n.char_end = r.char_end.max(r.char_start + 1);
            n.missing_word_count = r.missing_word_count;
            n.qc_flags.remove(&QcFlag::LowFidelity);
            true
        }
        None => {
            let stream = &index.stream;
            let end = n.char_end.min(stream.len());
            let start = n.char_start.min(end);
            n.fidelity = similarity(&full, &stream.slice(start, end));
            n.qc_flags.insert(QcFlag::LowFidelity);
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Category, SourcePage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn book(pages: &[&str]) -> SourceBook {
        SourceBook {
            book_id: "b".into(),
            title: "b".into(),
            category: Category::Hadith,
            reclassified: false,
            pages: pages
                .iter()
                .enumerate()
                .map(|(i, t)| SourcePage {
                    page_no: i as u32 + 1,
                    raw_text: t.to_string(),
                    normalized_text: t.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity("kitab", "kitab"), 1.0);
        assert!((similarity("abc", "axc") - 2.0 / 3.0).abs() < 1e-4);
        assert_eq!(similarity("", "abcd"), 0.0);
        assert_eq!(similarity("", ""), 1.0);
    }

    #[test]
    fn missing_words_examples() {
        assert_eq!(missing_words("a b c", "a b c"), 0);
        assert_eq!(missing_words("a b c", "a b x c"), 1);
        assert_eq!(missing_words("a q c", "a b c"), 0);
        assert_eq!(missing_words("", "a b"), 2);
    }

    #[test]
    fn exact_substring_on_page_seven() {
        let pages: Vec<String> =
            (1..=9).map(|p| format!("صفحة رقم {p} فيها كلام مختلف عن غيرها {}", "س".repeat(p))).collect();
        let refs: Vec<&str> = pages.iter().map(|s| s.as_str()).collect();
        let b = book(&refs);
        let idx = BookIndex::new(&b);
        let r = locate("رقم 7 فيها كلام", &idx, &AlignConfig::default(), None).unwrap();
        assert_eq!(r.fidelity, 1.0);
        assert_eq!((r.page_start, r.page_end), (7, 7));
        assert_eq!(idx.stream().slice(r.char_start, r.char_end), "رقم 7 فيها كلام");
        assert_eq!(r.edit_ops.total(), 0);
    }

    #[test]
    fn span_across_pages_maps_both_pages() {
        let b = book(&["اول الكتاب بداية النص", "تكملة النص في الصفحة التالية"]);
        let idx = BookIndex::new(&b);
        let r = locate("بداية النص تكملة النص", &idx, &AlignConfig::default(), None).unwrap();
        assert_eq!((r.page_start, r.page_end), (1, 2));
        assert_eq!(r.fidelity, 1.0);
    }

    #[test]
    fn noisy_query_keeps_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let alphabet: Vec<char> = "ابتثجحخدذرزسشصضطظعغفقكلمنهوي ".chars().collect();
        let page: String = (0..4000).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let b = book(&[&page]);
        let idx = BookIndex::new(&b);
        let chars: Vec<char> = page.chars().collect();
        let (s, e) = (1500, 1700);
        let mut q = chars[s..e].to_vec();
        for k in 0..10 {
            let pos = k * 20 + 3;
            q[pos] = if q[pos] == 'ب' { 'ت' } else { 'ب' };
        }
        let q: String = q.into_iter().collect();
        let r = locate(&q, &idx, &AlignConfig::default(), None).unwrap();
        assert!(r.fidelity >= 0.95);
        assert_eq!((r.char_start, r.char_end), (s, e));
    }

    #[test]
    fn foreign_text_not_found() {
        let b = book(&["هذا نص الكتاب الاول وفيه كلام كثير عن العلم والادب"]);
        let idx = BookIndex::new(&b);
        assert!(locate("qwertyuiopasdfghjkl zxcvbnm", &idx, &AlignConfig::default(), None).is_none());
    }

    #[test]
    fn fidelity_one_iff_no_edits() {
        let b = book(&["abcdefghij klmnop"]);
        let idx = BookIndex::new(&b);
        let r = locate("cdefgxij", &idx, &AlignConfig { min_fidelity: 0.5, ..Default::default() }, None).unwrap();
        assert!(r.fidelity < 1.0);
        assert!(r.edit_ops.total() > 0);
    }

    #[test]
    fn diacritics_ignored_when_matching() {
        let b = book(&["قَالَ الْعِلْمُ نُورٌ"]);
        let idx = BookIndex::new(&b);
        let r = locate("قال العلم نور", &idx, &AlignConfig::default(), None).unwrap();
        assert_eq!(r.fidelity, 1.0);
        assert_eq!((r.char_start, r.char_end), (0, idx.stream().len()));
    }

    #[test]
    fn low_fidelity_narration_flagged_not_removed() {
        let b = book(&["نص المصدر هنا"]);
        let idx = BookIndex::new(&b);
        let mut n = Narration {
            narration_id: crate::model::NarrationId::derive(&"b".into(), 1, 0, "", "x"),
            book_id: "b".into(),
            page_start: 1,
            page_end: 1,
            char_start: 0,
            char_end: 5,
            chain: String::new(),
            separator: String::new(),
            text: "zzzzzzzzzzzz".into(),
            fidelity: 1.0,
            confidence: 1.0,
            missing_word_count: 0,
            qc_flags: Default::default(),
            group_id: None,
        };
        assert!(!align_narration(&mut n, &idx, &AlignConfig::default()));
        assert!(n.qc_flags.contains(&QcFlag::LowFidelity));
        assert!(n.fidelity < 0.8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn naive(a: &[char], b: &[char]) -> usize {
            let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
            for i in 0..=a.len() {
                for j in 0..=b.len() {
                    d[i][j] = if i == 0 {
                        j
                    } else if j == 0 {
                        i
                    } else {
                        (d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1])).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1)
                    };
                }
            }
            d[a.len()][b.len()]
        }

        proptest! {
            #[test]
            fn symmetric_reflexive(a in "[abc ]{0,20}", b in "[abc ]{0,20}") {
                prop_assert_eq!(similarity(&a, &b), similarity(&b, &a));
                prop_assert_eq!(similarity(&a, &a), 1.0);
            }

            #[test]
            fn single_edit_moves_distance_by_at_most_one(a in "[abcd]{1,20}", b in "[abcd]{0,20}", pos in 0usize..20, c in "[abcd]") {
                let av: Vec<char> = a.chars().collect();
                let bv: Vec<char> = b.chars().collect();
                let mut edited = av.clone();
                let p = pos % edited.len();
                edited[p] = c.chars().next().unwrap();
                let d0 = levenshtein(&av, &bv) as i64;
                let d1 = levenshtein(&edited, &bv) as i64;
                prop_assert!((d0 - d1).abs() <= 1);
                prop_assert!(levenshtein(&av, &edited) <= 1);
            }

            #[test]
            fn matches_naive_oracle(a in "[ab]{0,12}", b in "[ab]{0,12}") {
                let av: Vec<char> = a.chars().collect();
                let bv: Vec<char> = b.chars().collect();
                prop_assert_eq!(levenshtein(&av, &bv), naive(&av, &bv));
                prop_assert_eq!(edit_ops(&av, &bv).total(), naive(&av, &bv));
            }
        }
    }
}
