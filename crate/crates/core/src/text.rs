//! Character classes and small helpers for Arabic-script text.
//!
//! All offsets in this crate are counted in Unicode scalar values (`char`s),
//! never bytes. Arabic text is almost entirely multi-byte in UTF-8 and the
//! pipeline needs stable positions across normalization passes.

/// Tatweel (kashida), the elongation character.
pub const TATWEEL: char = '\u{0640}';

/// Returns true for Arabic combining marks: harakat, tanwin, shadda, sukun,
/// superscript alef, Quranic annotation marks.
pub fn is_diacritic(c: char) -> bool {
    matches!(c,
        '\u{0610}'..='\u{061A}'
        | '\u{064B}'..='\u{065F}'
        | '\u{0670}'
        | '\u{06D6}'..='\u{06DC}'
        | '\u{06DF}'..='\u{06E4}'
        | '\u{06E7}'..='\u{06E8}'
        | '\u{06EA}'..='\u{06ED}'
        | '\u{08D3}'..='\u{08E1}'
        | '\u{08E3}'..='\u{08FF}'
    )
}

/// Letters of the Arabic block that can carry a diacritic.
pub fn is_arabic_letter(c: char) -> bool {
    matches!(c, '\u{0621}'..='\u{063A}' | '\u{0641}'..='\u{064A}' | '\u{0671}'..='\u{06D3}' | '\u{06D5}')
}

/// Sentence-final punctuation used to delimit semantic units.
pub fn is_sentence_delimiter(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\u{061F}' | '\u{06D4}' | '\u{2026}')
}

/// Removes every diacritic mark, leaving the consonantal skeleton.
pub fn strip_diacritics(text: &str) -> String {
    text.chars().filter(|c| !is_diacritic(*c)).collect()
}

/// Whitespace-delimited word tokens.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Returns the `[start, end)` char range as an owned string.
pub fn char_slice(chars: &[char], start: usize, end: usize) -> String {
    chars[start..end].iter().collect()
}

/// Fraction of alphabetic characters that belong to the Arabic script.
/// Returns 0 when the text has no alphabetic characters.
pub fn arabic_script_ratio(text: &str) -> f64 {
    let mut alpha = 0usize;
    let mut arabic = 0usize;
    for c in text.chars() {
        if c.is_alphabetic() {
            alpha += 1;
            if ('\u{0600}'..='\u{06FF}').contains(&c) || ('\u{0750}'..='\u{08FF}').contains(&c) {
                arabic += 1;
            }
        }
    }
    if alpha == 0 {
        0.0
    } else {
        arabic as f64 / alpha as f64
    }
}
