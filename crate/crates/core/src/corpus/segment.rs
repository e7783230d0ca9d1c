use serde::{Deserialize, Serialize};

use super::markup::math_spans;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    /// `[start, end)` in characters (Unicode scalar values) of the problem text.
    pub char_span: [usize; 2],
}

impl Sentence {
    pub fn char_start(&self) -> usize {
        self.char_span[0]
    }

    pub fn char_end(&self) -> usize {
        self.char_span[1]
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        start < self.char_span[1] && self.char_span[0] < end
    }
}

const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "etc", "vs", "cf", "resp", "approx", "dr", "mr", "mrs", "ms", "prof", "fig",
    "eq", "eqn", "no", "st",
];

/// Splits plain text into sentences.
///
/// A sentence ends at `.`, `?` or `!` (plus any trailing terminators or
/// closing quotes/brackets) followed by whitespace and an uppercase letter,
/// or by the end of the text. Terminators inside math spans never split,
/// and neither does a `.` after a single capital letter or a known
/// abbreviation.
pub fn segment_sentences(text: &str) -> Result<Vec<Sentence>> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot segment empty text"));
    }
    let bytes = text.as_bytes();
    let math = math_spans(text);
    let mut in_math = vec![false; bytes.len()];
    for span in &math {
        in_math[span.clone()].iter_mut().for_each(|m| *m = true);
    }

    let mut cuts = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if in_math[i] || !matches!(b, b'.' | b'?' | b'!') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len()
            && !in_math[j]
            && matches!(bytes[j], b'.' | b'?' | b'!' | b'"' | b'\'' | b')' | b']')
        {
            j += 1;
        }
        let rest = &text[j..];
        let after = rest.trim_start();
        let boundary = if after.is_empty() {
            true
        } else {
            rest.len() != after.len() && after.chars().next().is_some_and(char::is_uppercase)
        };
        if boundary && !(b == b'.' && j == i + 1 && is_abbreviation(&text[..i])) {
            cuts.push(j);
        }
        i = j;
    }
    if cuts.last() != Some(&bytes.len()) {
        cuts.push(bytes.len());
    }

    let mut sentences = Vec::with_capacity(cuts.len());
    let mut start = 0;
    for cut in cuts {
        let piece = &text[start..cut];
        let lead = piece.len() - piece.trim_start().len();
        let body = piece.trim();
        if !body.is_empty() {
            let b0 = start + lead;
            let b1 = b0 + body.len();
            sentences.push(Sentence {
                index: sentences.len(),
                text: body.to_owned(),
                char_span: [char_offset(text, b0), char_offset(text, b1)],
            });
        }
        start = cut;
    }
    Ok(sentences)
}

fn is_abbreviation(before: &str) -> bool {
    let word: String = before
        .chars()
        .rev()
        .take_while(|c| c.is_alphabetic() || *c == '.')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word.trim_start_matches('.');
    let mut chars = word.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return c.is_uppercase();
    }
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

pub(crate) fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Substring by character offsets; `None` when out of bounds.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b0 = indices.nth(start)?;
    let b1 = if end == start {
        b0
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[b0..b1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        segment_sentences(s).unwrap().into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn two_terminators() {
        assert_eq!(texts("What is X? I tried Y."), vec!["What is X?", "I tried Y."]);
    }

    #[test]
    fn decimal_does_not_split() {
        assert_eq!(
            texts("Let p = 0.5. Then compute E[X]."),
            vec!["Let p = 0.5.", "Then compute E[X]."]
        );
    }

    #[test]
    fn no_terminator_single_sentence() {
        assert_eq!(texts(r"Compute $P(A \mid B)$"), vec![r"Compute $P(A \mid B)$"]);
    }

    #[test]
    fn math_and_abbreviations_do_not_split() {
        assert_eq!(
            texts("Suppose $X. Y$ holds. Ask J. Smith e.g. Bob. Done!"),
            vec!["Suppose $X. Y$ holds.", "Ask J. Smith e.g. Bob.", "Done!"]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(texts("It is approx. equal. so what"), vec!["It is approx. equal. so what"]);
    }

    #[test]
    fn spans_are_char_offsets() {
        let text = "Soit μ donné. Trouver σ.";
        let s = segment_sentences(text).unwrap();
        assert_eq!(s.len(), 2);
        for sent in &s {
            assert_eq!(char_slice(text, sent.char_start(), sent.char_end()).unwrap(), sent.text);
        }
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(segment_sentences("  \n ").is_err());
    }

    proptest! {
        #[test]
        fn spans_reassemble_text(words in proptest::collection::vec("[A-Za-z0-9$.?! ]{1,12}", 1..12)) {
            let text = words.join(" ");
            prop_assume!(!text.trim().is_empty());
            let sentences = segment_sentences(&text).unwrap();
            prop_assert!(!sentences.is_empty());
            let mut prev_end = 0;
            for (k, s) in sentences.iter().enumerate() {
                prop_assert_eq!(s.index, k);
                prop_assert!(!s.text.is_empty());
                prop_assert!(s.char_start() >= prev_end && s.char_start() < s.char_end());
                prop_assert_eq!(char_slice(&text, s.char_start(), s.char_end()).unwrap(), s.text.as_str());
                prev_end = s.char_end();
            }
            let joined: String = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(norm(&joined), norm(&text));
        }
    }
}
