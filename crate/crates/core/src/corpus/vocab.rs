use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Corpus, CorpusError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const MASK: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]"];

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Word-level vocabulary with the four special tokens at ids 0–3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps words seen at least `min_frequency` times, ordered by descending
    /// count and then alphabetically.
    pub fn build(corpora: &[&Corpus], min_frequency: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for c in corpora {
            for d in &c.documents {
                for tok in tokenize(&d.summary) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, n)| *n >= min_frequency.max(1) && !SPECIAL_TOKENS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("specials are prepended")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(CorpusError::Vocabulary(
                "the first four tokens must be [PAD], [UNK], [CLS], [MASK]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `word`, or [`UNK`].
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number minus one is the id.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(String::from).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document::unlabeled(i.to_string(), *t))
                .collect(),
        )
    }

    #[test]
    fn threshold_excludes_rare_words() {
        let c = corpus(&["a a b"]);
        let v = Vocabulary::build(&[&c], 2);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("[PAD]"), PAD);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn ids_are_stable_and_specials_fixed() {
        let c = corpus(&["Export PDF file", "export the file", "file"]);
        let v1 = Vocabulary::build(&[&c], 1);
        let v2 = Vocabulary::build(&[&c], 1);
        assert_eq!(v1, v2);
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v1.id(s), i);
        }
        assert_eq!(v1.token(4), Some("file"));
        assert_eq!(v1.token(5), Some("export"));
    }

    #[test]
    fn size_non_increasing_in_threshold() {
        let c = corpus(&["a a a b b c", "c d e a", "b e e e"]);
        let sizes: Vec<usize> = (1..6).map(|m| Vocabulary::build(&[&c], m).len()).collect();
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]), "{sizes:?}");
        assert_eq!(*sizes.last().unwrap(), 4);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(&["alpha beta beta"]);
        let v = Vocabulary::build(&[&c], 1);
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("[PAD]\n[UNK]\n[CLS]\n[MASK]\nbeta\nalpha\n"));
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
        std::fs::write(&p, "beta\n").unwrap();
        assert!(Vocabulary::load(&p).is_err());
    }
}
