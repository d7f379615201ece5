//! Deterministic synthetic corpus with known narration boundaries.
//!
//! Books are built from clean, already-normalized sentences; gold spans are
//! recorded on that clean stream. The raw page text then gets the kind of
//! noise real sources carry (vowel marks, tatweel, letter variants, footnote
//! markers, page numbers, footnote blocks, ragged line breaks), all of which
//! the default normalization profile removes again.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{BookId, Category, CorpusManifest};

const SAMPLE_PIPELINE: &str = r#"seed = 1213

[paths]
sources = "sources.csv"
reclassify = "reclassify.csv"
manifest = "manifest.toml"
store_dir = "store"

[backends]
segmenter = "rule"
annotator = "mock"

[sample]
size = 60
"#;

const NARRATORS: [&str; 24] = [
    "علي بن ابراهيم",
    "محمد بن مسلم",
    "احمد بن محمد",
    "الحسين بن سعيد",
    "ابي عبد الله",
    "زرارة",
    "ابي بصير",
    "الحلبي",
    "هشام بن سالم",
    "عبد الله بن سنان",
    "يونس بن عبد الرحمن",
    "ابن ابي عمير",
    "حماد بن عثمان",
    "صفوان الجمال",
    "سماعة بن مهران",
    "جميل بن دراج",
    "معاوية بن عمار",
    "ابي حمزة",
    "سليمان بن خالد",
    "عمر بن اذينة",
    "الفضيل بن يسار",
    "بريد العجلي",
    "اسحاق بن عمار",
    "منصور بن حازم",
];

const OPENING_FORMULAS: [&str; 4] = ["حدثنا", "اخبرنا", "حدثني", "اخبرني"];

const PHRASES: [&str; 30] = [
    "العلم نور يهدي به الله من يشاء",
    "الصبر مفتاح الفرج",
    "فضل الصلاة عظيم عند الله",
    "الصدق ينجي صاحبه من المهالك",
    "الصيام جنة من النار",
    "الدعاء سلاح المؤمن",
    "بر الوالدين من افضل الاعمال",
    "الجار احق بالرعاية من غيره",
    "الزكاة تطهر المال وتنميه",
    "الحج المبرور ليس له جزاء الا الجنة",
    "الوضوء شطر الطهارة",
    "التجارة الصادقة بركة في الرزق",
    "الخلق الحسن يذيب الخطايا",
    "الايمان قول وعمل",
    "العبادة عشرة اجزاء",
    "طلب العلم فريضة علي كل مسلم",
    "من سعادة المرء الزوجة الصالحة",
    "الكلمة الطيبة صدقة",
    "حسن الظن من حسن العبادة",
    "المؤمن مراة اخيه",
    "الرفق لم يوضع في شيء الا زانه",
    "التواضع لا يزيد العبد الا رفعة",
    "الحياء من الايمان",
    "صلة الرحم تزيد في العمر",
    "اليد العليا خير من اليد السفلي",
    "الغضب مفتاح كل شر",
    "الصدقة تدفع البلاء",
    "الدنيا مزرعة الاخرة",
    "العقل دليل المؤمن",
    "الجنة تحت اقدام الامهات",
];

const CONNECTORS: [&str; 4] = ["و", "ثم", "فان", "لان"];

const TOPICS: [&str; 12] = [
    "فضل العلم",
    "الصلاة",
    "الصيام",
    "الزكاة",
    "الحج",
    "بر الوالدين",
    "حسن الخلق",
    "الدعاء",
    "الطهارة",
    "التجارة",
    "الصدق",
    "الصبر",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub books: usize,
    pub narrations_per_book: usize,
    pub seed: u64,
    /// Every n-th narration gets a long text spanning more sentences than
    /// one window holds.
    pub long_every: usize,
    pub long_sentences: usize,
    /// A chapter heading precedes every n-th narration.
    pub heading_every: usize,
    pub sentences_per_page: usize,
    /// Probability that a page break falls inside a sentence.
    pub mid_sentence_breaks: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            books: 3,
            narrations_per_book: 40,
            seed: 1,
            long_every: 9,
            long_sentences: 16,
            heading_every: 7,
            sentences_per_page: 7,
            mid_sentence_breaks: 0.4,
        }
    }
}

/// A narration (or heading) in the clean page stream of its book.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan {
    pub char_start: usize,
    pub chain_end: usize,
    pub text_start: usize,
    pub char_end: usize,
    pub is_hadith: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBook {
    pub book_id: BookId,
    pub title: String,
    pub category: Category,
    /// The category the source listing declares; may differ from
    /// `category` to exercise reclassification.
    pub listed_category: Category,
    pub clean_pages: Vec<String>,
    pub raw_pages: Vec<String>,
    pub gold: Vec<GoldSpan>,
}

impl SyntheticBook {
    pub fn clean_stream(&self) -> String {
        self.clean_pages.join(" ")
    }

    /// Source file text with `[[page N]]` markers.
    pub fn source_text(&self) -> String {
        let mut out = String::new();
        for (i, page) in self.raw_pages.iter().enumerate() {
            let _ = writeln!(out, "[[page {}]]\n{page}", i + 1);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub books: Vec<SyntheticBook>,
}

fn chain(rng: &mut ChaCha8Rng) -> String {
    let mut s = format!("{} {}", OPENING_FORMULAS.choose(rng).unwrap(), NARRATORS.choose(rng).unwrap());
    if rng.random_bool(0.2) {
        // Nested transmission: the longest chain must win.
        let _ = write!(s, " قال {} {}", OPENING_FORMULAS[0], NARRATORS.choose(rng).unwrap());
    }
    for _ in 0..rng.random_range(1..=4) {
        let _ = write!(s, " عن {}", NARRATORS.choose(rng).unwrap());
    }
    s.push_str(" قال");
    s
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    format!("{} {} {}.", PHRASES.choose(rng).unwrap(), CONNECTORS.choose(rng).unwrap(), PHRASES.choose(rng).unwrap())
}

struct Item {
    sentences: Vec<String>,
    /// Chars of the first sentence taken by the chain, and where the text
    /// starts; both zero for headings.
    chain_len: usize,
    text_offset: usize,
    is_hadith: bool,
}

fn narration(rng: &mut ChaCha8Rng, n_sentences: usize, shared_matn: Option<&[String]>) -> Item {
    let c = chain(rng);
    let matn: Vec<String> = match shared_matn {
        Some(m) => m.to_vec(),
        None => (0..n_sentences).map(|_| sentence(rng)).collect(),
    };
    let chain_len = c.chars().count();
    let mut sentences = matn;
    sentences[0] = format!("{c}: {}", sentences[0]);
    Item { sentences, chain_len, text_offset: chain_len + 2, is_hadith: true }
}

fn heading(rng: &mut ChaCha8Rng) -> Item {
    Item {
        sentences: vec![format!("باب {}.", TOPICS.choose(rng).unwrap())],
        chain_len: 0,
        text_offset: 0,
        is_hadith: false,
    }
}

const MARKS: [char; 5] = ['\u{064E}', '\u{064F}', '\u{0650}', '\u{0652}', '\u{0651}'];
const NON_CONNECTING: [char; 6] = ['ا', 'د', 'ذ', 'ر', 'ز', 'و'];

fn noisy_word(rng: &mut ChaCha8Rng, word: &str) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.first() == Some(&'ا') && chars.get(1) != Some(&'ل') && rng.random_bool(0.3) {
        chars[0] = if rng.random_bool(0.5) { 'أ' } else { 'إ' };
    }
    if chars.len() > 1 && chars.last() == Some(&'ي') && rng.random_bool(0.3) {
        *chars.last_mut().unwrap() = 'ى';
    }
    let vocalize = rng.random_bool(0.15);
    let mut out = String::new();
    for (i, c) in chars.iter().enumerate() {
        out.push(*c);
        if i == 0 && chars.len() >= 3 && !NON_CONNECTING.contains(c) && rng.random_bool(0.05) {
            out.push('\u{0640}');
        }
        if vocalize && crate::text::is_arabic_letter(*c) {
            out.push(*MARKS.choose(rng).unwrap());
        }
    }
    out
}

fn noisy_page(rng: &mut ChaCha8Rng, clean: &str, page_no: usize) -> String {
    let mut out = String::new();
    for (i, word) in clean.split(' ').enumerate() {
        if i > 0 {
            let after_sentence = out.ends_with('.');
            out.push(if after_sentence && rng.random_bool(0.3) { '\n' } else { ' ' });
        }
        out.push_str(&noisy_word(rng, word));
        if rng.random_bool(0.02) && !word.ends_with('.') && !word.ends_with(':') {
            let n = rng.random_range(1..=9u32);
            if rng.random_bool(0.5) {
                let _ = write!(out, " ({n})");
            } else {
                let d = char::from_u32(0x0660 + n).unwrap();
                let _ = write!(out, " ({d})");
            }
        }
    }
    if rng.random_bool(0.5) {
        let _ = write!(out, "\n\n- {page_no} -");
    }
    if rng.random_bool(0.3) {
        out.push_str("\n___\n(1) في نسخة اخرى زيادة.\n(2) انظر الباب السابق.");
    }
    out
}

/// Splits the clean stream into pages at spaces, mostly between sentences.
fn paginate(rng: &mut ChaCha8Rng, stream: &str, cfg: &SyntheticConfig) -> Vec<String> {
    let chars: Vec<char> = stream.chars().collect();
    let sentence_gaps: Vec<usize> = (1..chars.len()).filter(|&i| chars[i] == ' ' && chars[i - 1] == '.').collect();
    let word_gaps: Vec<usize> = (1..chars.len()).filter(|&i| chars[i] == ' ' && chars[i - 1] != '.').collect();
    let mut cuts = Vec::new();
    let mut k = cfg.sentences_per_page;
    while k < sentence_gaps.len() {
        let cut = sentence_gaps[k];
        if rng.random_bool(cfg.mid_sentence_breaks) {
            // Move the break into the middle of the following sentence.
            let next = word_gaps.iter().copied().filter(|&g| g > cut).nth(2);
            let limit = sentence_gaps.get(k + 1).copied().unwrap_or(chars.len());
            cuts.push(next.filter(|&g| g < limit).unwrap_or(cut));
        } else {
            cuts.push(cut);
        }
        k += cfg.sentences_per_page + rng.random_range(0..3);
    }
    let mut pages = Vec::new();
    let mut start = 0;
    for c in cuts {
        pages.push(chars[start..c].iter().collect());
        start = c + 1;
    }
    pages.push(chars[start..].iter().collect());
    pages
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shared: Vec<Vec<String>> = Vec::new();
    let mut books = Vec::new();
    for b in 0..cfg.books {
        let mut items = Vec::new();
        for i in 0..cfg.narrations_per_book {
            if i % cfg.heading_every.max(1) == 0 {
                items.push(heading(&mut rng));
            }
            let long = cfg.long_every > 0 && i % cfg.long_every == cfg.long_every - 1;
            let n = if long { cfg.long_sentences } else { rng.random_range(1..=4) };
            // Some texts recur across books with different chains.
            let reuse = b > 0 && !long && !shared.is_empty() && rng.random_bool(0.15);
            let item = if reuse {
                let m = shared.choose(&mut rng).unwrap().clone();
                narration(&mut rng, m.len(), Some(&m))
            } else {
                let item = narration(&mut rng, n, None);
                if b == 0 && !long {
                    let mut matn = item.sentences.clone();
                    matn[0] = matn[0].chars().skip(item.text_offset).collect();
                    shared.push(matn);
                }
                item
            };
            items.push(item);
        }
        let mut stream = String::new();
        let mut gold = Vec::new();
        let mut pos = 0;
        for item in &items {
            if !stream.is_empty() {
                stream.push(' ');
                pos += 1;
            }
            let body = item.sentences.join(" ");
            let len = body.chars().count();
            gold.push(GoldSpan {
                char_start: pos,
                chain_end: pos + item.chain_len,
                text_start: pos + item.text_offset,
                char_end: pos + len,
                is_hadith: item.is_hadith,
            });
            stream.push_str(&body);
            pos += len;
        }
        let clean_pages = paginate(&mut rng, &stream, cfg);
        let raw_pages = clean_pages.iter().enumerate().map(|(p, page)| noisy_page(&mut rng, page, p + 1)).collect();
        let book_id = BookId::new(format!("b{}", b + 1));
        let listed_category = if b == 1 { Category::Fiqh } else { Category::Hadith };
        books.push(SyntheticBook {
            title: format!("كتاب تجريبي {}", b + 1),
            book_id,
            category: Category::Hadith,
            listed_category,
            clean_pages,
            raw_pages,
            gold,
        });
    }
    SyntheticCorpus { books }
}

fn category_name(c: Category) -> &'static str {
    match c {
        Category::Hadith => "hadith",
        Category::Fiqh => "fiqh",
        Category::Tafsir => "tafsir",
        Category::Other => "other",
    }
}

impl SyntheticCorpus {
    pub fn narration_count(&self) -> usize {
        self.books.iter().flat_map(|b| &b.gold).filter(|g| g.is_hadith).count()
    }

    /// Writes a runnable corpus directory: the sources, a manifest, a
    /// pipeline config and the gold spans as `gold.jsonl`.
    pub fn write_sample(&self, dir: &Path, name: &str) -> std::io::Result<()> {
        self.write_sources(dir)?;
        let manifest = CorpusManifest { name: name.into(), source: "synthetic".into(), ..Default::default() };
        std::fs::write(dir.join("manifest.toml"), manifest.to_toml())?;
        std::fs::write(dir.join("pipeline.toml"), SAMPLE_PIPELINE)?;
        let mut gold = String::new();
        for b in &self.books {
            for g in &b.gold {
                let line = serde_json::json!({ "book_id": b.book_id, "span": g });
                let _ = writeln!(gold, "{line}");
            }
        }
        std::fs::write(dir.join("gold.jsonl"), gold)
    }

    /// Writes `books/*.txt`, `sources.csv` and `reclassify.csv` under
    /// `dir`, plus a tafsir book with no narrations that the pipeline must
    /// leave alone.
    pub fn write_sources(&self, dir: &Path) -> std::io::Result<()> {
        let books_dir = dir.join("books");
        std::fs::create_dir_all(&books_dir)?;
        let mut sources = String::from("path,category,book_id,title\n");
        let mut reclassify = String::from("book_id,category\n");
        for b in &self.books {
            std::fs::write(books_dir.join(format!("{}.txt", b.book_id)), b.source_text())?;
            let _ = writeln!(
                sources,
                "books/{}.txt,{},{},{}",
                b.book_id,
                category_name(b.listed_category),
                b.book_id,
                b.title
            );
            if b.listed_category != b.category {
                let _ = writeln!(reclassify, "{},{}", b.book_id, category_name(b.category));
            }
        }
        std::fs::write(
            books_dir.join("t1.txt"),
            "[[page 1]]\nتفسير الاية الاولى في بيان المعنى.\n[[page 2]]\nوتكملة البيان.\n",
        )?;
        let _ = writeln!(sources, "books/t1.txt,tafsir,t1,تفسير تجريبي");
        std::fs::write(dir.join("sources.csv"), sources)?;
        std::fs::write(dir.join("reclassify.csv"), reclassify)?;
        Ok(())
    }
}
