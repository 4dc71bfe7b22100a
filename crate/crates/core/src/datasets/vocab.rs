use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Id of the end-of-sequence marker in every vocabulary.
pub const END: usize = 0;
/// Id of the out-of-vocabulary token in word vocabularies.
pub const OOV: usize = 1;

/// Fixed word vocabulary.
///
/// Ids: `0` end marker, `1` OOV, then the words in order. The start marker
/// is input-only and takes id `len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from distinct words. Words may not contain spaces.
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(' ') {
                return Err(Error::invalid(format!("vocabulary word {w:?} is empty or contains a space")));
            }
            if index.insert(w.clone(), i + 2).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocabulary { tokens: words, index })
    }

    /// The `k` most frequent space-free words; ties broken alphabetically.
    pub fn top_k<'a>(words: impl IntoIterator<Item = &'a str>, k: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for w in words {
            if !w.contains(' ') {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words = ranked.into_iter().take(k).map(|(w, _)| w.to_string()).collect();
        Vocabulary::new(words).expect("counted words are distinct and space-free")
    }

    pub fn words(&self) -> &[String] {
        &self.tokens
    }

    /// Output vocabulary size including the end and OOV markers.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn start(&self) -> usize {
        self.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV)
    }

    pub fn word(&self, id: usize) -> Result<&str> {
        match id {
            END => Ok("</s>"),
            OOV => Ok("<oov>"),
            _ => self
                .tokens
                .get(id - 2)
                .map(String::as_str)
                .ok_or(Error::UnknownToken {
                    token: id,
                    size: self.len(),
                }),
        }
    }

    /// Token ids of a sentence followed by the end marker.
    pub fn encode(&self, sentence: &[String]) -> Vec<usize> {
        let mut ids: Vec<usize> = sentence.iter().map(|w| self.id(w)).collect();
        ids.push(END);
        ids
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Vocabulary::new(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Character vocabulary: `0` end-of-word, then the alphabet. The start
/// marker is input-only and takes id `len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharVocab {
    alphabet: Vec<char>,
}

impl CharVocab {
    pub fn new(alphabet: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut seen = Vec::new();
        for c in alphabet {
            if seen.contains(&c) {
                return Err(Error::invalid(format!("duplicate character {c:?}")));
            }
            seen.push(c);
        }
        Ok(CharVocab { alphabet: seen })
    }

    /// Lowercase letters, apostrophe and space.
    pub fn ascii_lower() -> Self {
        CharVocab::new(('a'..='z').chain(['\'', ' '])).expect("distinct")
    }

    pub fn len(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    pub fn start(&self) -> usize {
        self.len()
    }

    pub fn encode(&self, word: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(word.len() + 1);
        for c in word.chars() {
            let i = self
                .alphabet
                .iter()
                .position(|&a| a == c)
                .ok_or_else(|| Error::invalid(format!("character {c:?} not in alphabet")))?;
            ids.push(i + 1);
        }
        ids.push(END);
        Ok(ids)
    }

    /// Decodes content ids, stopping at the end marker.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            if id == END {
                break;
            }
            let c = self.alphabet.get(id - 1).ok_or(Error::UnknownToken {
                token: id,
                size: self.len(),
            })?;
            s.push(*c);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_ids_and_oov() {
        let v = Vocabulary::new(vec!["i".into(), "have".into()]).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.start(), 4);
        let s: Vec<String> = ["i", "have", "zzz"].iter().map(|s| s.to_string()).collect();
        assert_eq!(v.encode(&s), vec![2, 3, OOV, END]);
        assert_eq!(v.word(3).unwrap(), "have");
        assert!(v.word(9).is_err());
    }

    #[test]
    fn rejects_spaces_and_duplicates() {
        assert!(Vocabulary::new(vec!["i have".into()]).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn top_k_orders_by_count_then_word() {
        let v = Vocabulary::top_k(["b", "a", "c", "c", "a", "x y", "x y", "x y"], 2);
        assert_eq!(v.words(), ["a", "c"]);
    }

    #[test]
    fn char_round_trip() {
        let v = CharVocab::ascii_lower();
        let ids = v.encode("i have").unwrap();
        assert_eq!(*ids.last().unwrap(), END);
        assert_eq!(v.decode(&ids).unwrap(), "i have");
        assert!(v.encode("É").is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::new(vec!["x".into(), "y".into()]).unwrap();
        let j = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&j).unwrap(), v);
    }
}
