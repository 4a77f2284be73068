//! Text utilities shared by every stage: sentence segmentation, word
//! counting, the 150-word cap and the median-length statistic used in
//! prompts.

use thiserror::Error;

/// Hard cap on the length (in whitespace tokens) of any document an agent
/// may submit.
pub const WORD_CAP: usize = 150;

/// Tokens that end in a period but never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "st.", "vs.", "e.g.", "i.e.", "etc.",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TextError {
    #[error("median of an empty collection is undefined")]
    EmptyCollection,
    #[error("no sentence boundary within the first {cap} words")]
    NoSentenceBoundary { cap: usize },
}

/// Number of whitespace-separated tokens after trimming.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// True when the token ending at byte `end` (exclusive) of `text` is an
/// abbreviation from the allowlist.
fn ends_with_abbreviation(text: &str, end: usize) -> bool {
    let head = &text[..end];
    let start = head
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let token = head[start..].trim_start_matches(['(', '"', '\'', '[']);
    let lower = token.to_lowercase();
    ABBREVIATIONS.iter().any(|a| *a == lower)
}

/// Splits `text` into sentences.
///
/// A boundary is a run of `.`, `!` or `?` (optionally followed by closing
/// quotes or brackets) that is followed by whitespace and an uppercase
/// letter, or by the end of the text. A single `.` closing a token from the
/// abbreviation allowlist is not a boundary. Returned sentences are trimmed
/// and never empty.
pub fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;

    while i < chars.len() {
        if !is_terminator(chars[i].1) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && is_terminator(chars[i].1) {
            i += 1;
        }
        let run_len = i - run_start;
        while i < chars.len() && is_closer(chars[i].1) {
            i += 1;
        }
        let end = chars.get(i).map(|(b, _)| *b).unwrap_or(text.len());

        let single_period = run_len == 1 && chars[run_start].1 == '.';
        let term_end = chars[run_start].0 + 1;
        if single_period && ends_with_abbreviation(text, term_end) {
            continue;
        }

        let mut j = i;
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        let at_end = j == chars.len();
        let boundary = at_end || (j > i && chars[j].1.is_uppercase());
        if boundary {
            let piece = text[start..end].trim();
            if !piece.is_empty() {
                out.push(piece.to_string());
            }
            start = end;
        }
    }

    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

/// Median of the word counts of `texts`. For an even number of texts the
/// two middle values are averaged and rounded half-up.
pub fn median_word_length<'a, I>(texts: I) -> Result<usize, TextError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut lengths: Vec<usize> = texts.into_iter().map(word_count).collect();
    if lengths.is_empty() {
        return Err(TextError::EmptyCollection);
    }
    lengths.sort_unstable();
    let mid = lengths.len() / 2;
    if lengths.len() % 2 == 1 {
        Ok(lengths[mid])
    } else {
        Ok((lengths[mid - 1] + lengths[mid]).div_ceil(2))
    }
}

/// Cuts `text` down to whole sentences totalling at most `cap` words.
///
/// Returns the text unchanged (trimmed) when it already fits. Fails when the
/// first sentence alone exceeds the cap, since no sentence boundary exists
/// to cut at.
pub fn truncate_to_sentences(text: &str, cap: usize) -> Result<String, TextError> {
    if word_count(text) <= cap {
        return Ok(text.trim().to_string());
    }
    let mut kept: Vec<String> = Vec::new();
    let mut total = 0usize;
    for sentence in sentences(text) {
        let n = word_count(&sentence);
        if total + n > cap {
            break;
        }
        total += n;
        kept.push(sentence);
    }
    if kept.is_empty() {
        return Err(TextError::NoSentenceBoundary { cap });
    }
    Ok(kept.join(" "))
}

/// True when `text` ends at a sentence terminator (possibly followed by
/// closing quotes or brackets).
pub fn ends_at_sentence_boundary(text: &str) -> bool {
    let trimmed = text.trim_end().trim_end_matches(is_closer);
    trimmed.chars().last().is_some_and(is_terminator)
}
