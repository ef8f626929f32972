//! Word-level tokenizer and vocabulary.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const QA_TASK: usize = 4;
pub const PAGE: usize = 5;
pub const DENOISE_TASK: usize = 6;
pub const FIRST_SENTINEL: usize = 7;

pub const DEFAULT_SENTINELS: usize = 32;

const PUNCT_NO_SPACE_BEFORE: &[&str] = &[",", ".", ";", ":", "!", "?", ")", "%"];

/// Lowercases, splits on whitespace and splits every punctuation character
/// into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars().flat_map(char::to_lowercase) {
            if ch.is_alphanumeric() {
                cur.push(ch);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Inverse of [`tokenize`] up to spacing: no space before closing punctuation.
pub fn detokenize<S: AsRef<str>>(words: &[S]) -> String {
    let mut out = String::new();
    for w in words {
        let w = w.as_ref();
        if !out.is_empty() && !PUNCT_NO_SPACE_BEFORE.contains(&w) {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    n_sentinels: usize,
}

impl Vocab {
    fn reserved(n_sentinels: usize) -> Vec<String> {
        let mut w: Vec<String> = ["<pad>", "<s>", "</s>", "<unk>", "<qa>", "<page>", "<denoise>"].iter().map(|s| s.to_string()).collect();
        w.extend((0..n_sentinels).map(|i| format!("<extra_{i}>")));
        w
    }

    /// Reserved tokens followed by the sorted distinct tokens of `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, n_sentinels: usize) -> Self {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(tokenize(t));
        }
        let mut words = Self::reserved(n_sentinels);
        words.extend(set.into_iter().filter(|w| !(w.starts_with('<') && w.ends_with('>') && w.len() > 2)));
        Self::from_parts(words, n_sentinels)
    }

    fn from_parts(words: Vec<String>, n_sentinels: usize) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            words,
            index,
            n_sentinels,
        }
    }

    /// Rebuilds a vocabulary from its full word list (as stored in checkpoints).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let n_sentinels = words.iter().filter(|w| w.starts_with("<extra_")).count();
        let expected = Self::reserved(n_sentinels);
        if words.len() < expected.len() || words[..expected.len()] != expected[..] {
            return Err(Error::Validation("vocabulary does not start with the reserved tokens".into()));
        }
        let v = Self::from_parts(words, n_sentinels);
        if v.index.len() != v.words.len() {
            return Err(Error::Validation("vocabulary has duplicate entries".into()));
        }
        Ok(v)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn n_sentinels(&self) -> usize {
        self.n_sentinels
    }

    pub fn sentinel(&self, i: usize) -> usize {
        assert!(i < self.n_sentinels, "sentinel {i} out of range");
        FIRST_SENTINEL + i
    }

    pub fn is_sentinel(&self, id: usize) -> bool {
        (FIRST_SENTINEL..FIRST_SENTINEL + self.n_sentinels).contains(&id)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < FIRST_SENTINEL + self.n_sentinels
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    /// Decodes up to the first end token, skipping other special tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .take_while(|&&i| i != END)
            .filter(|&&i| !self.is_special(i))
            .map(|&i| self.word(i))
            .collect();
        detokenize(&words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("What is K12?"), ["what", "is", "k12", "?"]);
        assert_eq!(tokenize("november 8, 1977"), ["november", "8", ",", "1977"]);
        assert_eq!(detokenize(&tokenize("november 8, 1977")), "november 8, 1977");
    }

    #[test]
    fn reserved_layout_and_round_trip() {
        let v = Vocab::build(["b a", "c?"], 4);
        assert_eq!(v.word(PAD), "<pad>");
        assert_eq!(v.word(QA_TASK), "<qa>");
        assert_eq!(v.sentinel(3), FIRST_SENTINEL + 3);
        assert_eq!(v.len(), 7 + 4 + 4);
        assert_eq!(v.encode("A zz"), vec![v.id("a"), UNK]);
        assert_eq!(v.decode(&[v.id("a"), v.id("?"), END, v.id("b")]), "a?");
        assert_eq!(Vocab::from_words(v.words().to_vec()).unwrap(), v);
        assert!(Vocab::from_words(vec!["x".into()]).is_err());
    }
}
