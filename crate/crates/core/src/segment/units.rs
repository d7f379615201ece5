use serde::{Deserialize, Serialize};

use crate::model::PageStream;
use crate::text::is_sentence_delimiter;

/// A sentence-delimited span of the page stream. Units tile the stream:
/// each one ends after a sentence delimiter (plus trailing whitespace), at a
/// page boundary, or at the size limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticUnit {
    pub unit_index: usize,
    pub page_no: u32,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

pub const MIN_UNIT_CHARS: usize = 64;

/// Splits the page stream into semantic units of at most `max_unit_chars`
/// chars. Oversized sentences are cut at the last whitespace inside the
/// limit, or hard-cut at the limit when there is none.
///
/// # Panics
/// If `max_unit_chars < 64`.
pub fn unitize(stream: &PageStream, max_unit_chars: usize) -> Vec<SemanticUnit> {
    assert!(max_unit_chars >= MIN_UNIT_CHARS, "max_unit_chars must be at least {MIN_UNIT_CHARS}");
    let chars = &stream.chars;
    let mut ranges: Vec<(u32, usize, usize)> = Vec::new();
    for (i, &(page_no, page_start)) in stream.page_starts.iter().enumerate() {
        let region_end = stream.page_starts.get(i + 1).map(|(_, s)| *s).unwrap_or(chars.len());
        let mut unit_start = page_start;
        let mut pos = page_start;
        while pos < region_end {
            if is_sentence_delimiter(chars[pos]) {
                let mut end = pos + 1;
                while end < region_end && chars[end].is_whitespace() {
                    end += 1;
                }
                push_limited(chars, page_no, unit_start, end, max_unit_chars, &mut ranges);
                unit_start = end;
                pos = end;
            } else {
                pos += 1;
            }
        }
        if unit_start < region_end {
            push_limited(chars, page_no, unit_start, region_end, max_unit_chars, &mut ranges);
        }
    }
    ranges
        .into_iter()
        .enumerate()
        .map(|(unit_index, (page_no, s, e))| SemanticUnit {
            unit_index,
            page_no,
            char_start: s,
            char_end: e,
            text: chars[s..e].iter().collect(),
        })
        .collect()
}

fn push_limited(
    chars: &[char],
    page_no: u32,
    mut start: usize,
    end: usize,
    max: usize,
    out: &mut Vec<(u32, usize, usize)>,
) {
    while end - start > max {
        let limit = start + max;
        let cut = (start + 1..=limit).rev().find(|&c| chars[c - 1].is_whitespace()).unwrap_or(limit);
        out.push((page_no, start, cut));
        start = cut;
    }
    if start < end {
        out.push((page_no, start, end));
    }
}

/// A run of consecutive units handed to the segmenter as one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub first_unit: usize,
    pub last_unit: usize,
    pub overlap_units: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.last_unit - self.first_unit + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn char_range(&self, units: &[SemanticUnit]) -> (usize, usize) {
        (units[self.first_unit].char_start, units[self.last_unit].char_end)
    }

    pub fn text(&self, units: &[SemanticUnit]) -> String {
        units[self.first_unit..=self.last_unit].iter().map(|u| u.text.as_str()).collect()
    }
}

/// Fixed schedule of windows of `window_units` units where consecutive
/// windows share exactly `overlap_units` units. The final window may be
/// shorter.
///
/// # Panics
/// If `overlap_units == 0` or `overlap_units >= window_units`.
pub fn plan_windows(unit_count: usize, window_units: usize, overlap_units: usize) -> Vec<Window> {
    assert!(overlap_units >= 1 && overlap_units < window_units, "need 1 <= overlap < window");
    let mut windows = Vec::new();
    if unit_count == 0 {
        return windows;
    }
    let mut first = 0;
    loop {
        let last = (first + window_units - 1).min(unit_count - 1);
        windows.push(Window { first_unit: first, last_unit: last, overlap_units });
        if last == unit_count - 1 {
            break;
        }
        first = last + 1 - overlap_units;
    }
    windows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Category, SourceBook, SourcePage};

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

    fn assert_tiles(units: &[SemanticUnit], stream: &PageStream) {
        let mut pos = 0;
        for (i, u) in units.iter().enumerate() {
            assert_eq!(u.unit_index, i);
            assert_eq!(u.char_start, pos);
            assert!(u.char_end > u.char_start);
            pos = u.char_end;
        }
        assert_eq!(pos, stream.len());
        let joined: String = units.iter().map(|u| u.text.as_str()).collect();
        assert_eq!(joined, stream.slice(0, stream.len()));
    }

    #[test]
    fn three_sentences_three_units() {
        let b = book(&["الاول هنا. الثاني هنا! الثالث هنا؟"]);
        let s = b.stream();
        let units = unitize(&s, 400);
        assert_eq!(units.len(), 3);
        assert_eq!(units[0].text, "الاول هنا. ");
        assert_eq!(units[2].text, "الثالث هنا؟");
        assert_tiles(&units, &s);
    }

    #[test]
    fn empty_book_no_units() {
        let b = book(&[]);
        assert!(unitize(&b.stream(), 100).is_empty());
    }

    #[test]
    fn no_delimiters_hard_split() {
        let page: String = std::iter::repeat('ب').take(1234).collect();
        let b = book(&[&page]);
        let s = b.stream();
        let units = unitize(&s, 100);
        assert_eq!(units.len(), 1234usize.div_ceil(100));
        assert!(units.iter().all(|u| u.text.chars().count() <= 100));
        assert_tiles(&units, &s);
    }

    #[test]
    fn long_sentence_cut_at_whitespace() {
        let page = "كلمة ".repeat(40);
        let b = book(&[page.trim_end()]);
        let s = b.stream();
        let units = unitize(&s, 64);
        assert!(units.iter().all(|u| u.text.chars().count() <= 64));
        assert!(units[..units.len() - 1].iter().all(|u| u.text.ends_with(' ')));
        assert_tiles(&units, &s);
    }

    #[test]
    fn units_stop_at_page_boundary() {
        let b = book(&["جملة بلا نهاية", "تكملة الجملة. جديدة."]);
        let s = b.stream();
        let units = unitize(&s, 400);
        assert_tiles(&units, &s);
        assert_eq!(units[0].page_no, 1);
        assert_eq!(units[0].text, "جملة بلا نهاية ");
        assert_eq!(units[1].page_no, 2);
    }

    #[test]
    fn windows_share_exact_overlap_and_cover() {
        for n in 1..60 {
            for (w, k) in [(12, 3), (4, 1), (5, 4)] {
                let ws = plan_windows(n, w, k);
                assert_eq!(ws[0].first_unit, 0);
                assert_eq!(ws.last().unwrap().last_unit, n - 1);
                for pair in ws.windows(2) {
                    assert_eq!(pair[0].last_unit + 1 - pair[1].first_unit, k);
                }
                for win in &ws {
                    assert!(win.len() <= w);
                }
            }
        }
        assert!(plan_windows(0, 12, 3).is_empty());
    }
}
