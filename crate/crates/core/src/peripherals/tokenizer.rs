use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Lowercasing, whitespace-splitting subword tokenizer.
///
/// Each word is cut by greedy longest match against the vocabulary; a
/// character with no piece becomes `<unk>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

impl Tokenizer {
    /// Pieces become ids in the given order, after `<unk>` at id 0.
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![UNK.to_string()];
        all.extend(pieces.into_iter().map(Into::into).filter(|p| p != UNK));
        Self::from_vocab(all)
    }

    fn from_vocab(pieces: Vec<String>) -> Result<Self> {
        if pieces.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Format(format!("vocabulary must start with {UNK}")));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary piece {p:?} at line {}", i + 1)));
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary piece {p:?}")));
            }
        }
        let max_chars = pieces.iter().skip(1).map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Tokenizer { pieces, index, max_chars })
    }

    /// Top-`top_k` words by frequency (ties alphabetical), then every
    /// character seen in the corpus.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, top_k: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars = BTreeSet::new();
        for text in corpus {
            for w in normalize(text) {
                chars.extend(w.chars());
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<_> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut pieces: Vec<String> = words.into_iter().take(top_k).map(|(w, _)| w).collect();
        for c in chars {
            let s = c.to_string();
            if !pieces.contains(&s) {
                pieces.push(s);
            }
        }
        Self::from_pieces(pieces).expect("corpus pieces are valid")
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    /// Token ids grouped by source word.
    pub fn tokenize_words(&self, text: &str) -> Vec<Vec<usize>> {
        normalize(text).iter().map(|w| self.split_word(w)).collect()
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        self.tokenize_words(text).into_iter().flatten().collect()
    }

    fn split_word(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let longest = (1..=self.max_chars.min(chars.len() - i)).rev().find_map(|n| {
                let cand: String = chars[i..i + n].iter().collect();
                self.index.get(&cand).map(|&id| (id, n))
            });
            match longest {
                Some((id, n)) => {
                    out.push(id);
                    i += n;
                }
                None => {
                    out.push(UNK_ID);
                    i += 1;
                }
            }
        }
        out
    }

    pub fn pieces_of(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.piece(i).unwrap_or(UNK)).collect()
    }

    /// Joins pieces within a word and words with single spaces.
    pub fn detokenize(&self, words: &[Vec<usize>]) -> String {
        words.iter().map(|w| self.pieces_of(w).concat()).collect::<Vec<_>>().join(" ")
    }

    pub fn to_vocab_string(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }

    pub fn from_vocab_str(text: &str) -> Result<Self> {
        Self::from_vocab(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_vocab_string())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_vocab_str(&std::fs::read_to_string(path)?)
    }
}

/// Lowercase and split on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
