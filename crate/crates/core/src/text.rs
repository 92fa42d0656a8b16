//! Whitespace tokenization and the normalization used by canary containment.

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes `s`, collapses every whitespace run to a single space and
/// trims both ends. Case is preserved.
pub fn normalize(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn whitespace_tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

pub fn count_whitespace_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Splits text into pieces of the form `<leading whitespace><non-whitespace run>`,
/// the unit the simulator uses as a "token". Concatenating the pieces gives
/// back `s` minus any trailing whitespace.
pub fn word_pieces(s: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut seen_word = false;
    for (i, ch) in s.char_indices() {
        if ch.is_whitespace() {
            if seen_word {
                pieces.push(&s[start..i]);
                start = i;
                seen_word = false;
            }
        } else {
            seen_word = true;
        }
    }
    if seen_word {
        pieces.push(&s[start..]);
    }
    pieces
}
