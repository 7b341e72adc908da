//! Tokenizers: a fixed byte-level one and a word-level one whose vocabulary
//! is built from a corpus. Both are lossless on their inputs.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token ids together with the text they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub text: String,
}

impl TokenSeq {
    pub fn char_count(&self) -> u64 {
        self.text.chars().count() as u64
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for WordVocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }
}

impl From<WordVocab> for Vec<String> {
    fn from(v: WordVocab) -> Self {
        v.tokens
    }
}

fn word_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"\w+|\s+|[^\w\s]").expect("static regex"))
}

fn split_words(text: &str) -> impl Iterator<Item = &str> {
    word_pattern().find_iter(text).map(|m| m.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Tokenizer {
    Bytes,
    Words { vocab: WordVocab },
}

impl Tokenizer {
    /// Word tokenizer over every word, whitespace run and punctuation mark
    /// that occurs in `texts`, ids assigned in sorted order.
    pub fn words_from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = texts.into_iter().flat_map(split_words).collect();
        Tokenizer::Words {
            vocab: WordVocab::from(set.into_iter().map(str::to_owned).collect::<Vec<_>>()),
        }
    }

    pub fn vocab_size(&self) -> u32 {
        match self {
            Tokenizer::Bytes => 256,
            Tokenizer::Words { vocab } => vocab.tokens.len().max(1) as u32,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tokenizers serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("tokenizer file: {e}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Tokenizer::Bytes => "bytes",
            Tokenizer::Words { .. } => "words",
        }
    }

    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        let ids = match self {
            Tokenizer::Bytes => text.bytes().map(u32::from).collect(),
            Tokenizer::Words { vocab } => split_words(text)
                .map(|w| {
                    vocab
                        .index
                        .get(w)
                        .copied()
                        .ok_or_else(|| Error::Input(format!("token {w:?} not in vocabulary")))
                })
                .collect::<Result<_>>()?,
        };
        Ok(TokenSeq {
            ids,
            text: text.to_owned(),
        })
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            match self {
                Tokenizer::Bytes => out.push(
                    u8::try_from(id).map_err(|_| Error::Input(format!("byte token {id} > 255")))?,
                ),
                Tokenizer::Words { vocab } => out.extend_from_slice(
                    vocab
                        .tokens
                        .get(id as usize)
                        .ok_or_else(|| Error::Input(format!("word token {id} outside vocabulary")))?
                        .as_bytes(),
                ),
            }
        }
        Ok(out)
    }

    /// Decoded text with invalid UTF-8 replaced, for distortion metrics.
    pub fn decode_lossy(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode(ids)?).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip_utf8() {
        let t = Tokenizer::Bytes;
        let seq = t.encode("héllo ✓").unwrap();
        assert_eq!(seq.ids.len(), "héllo ✓".len());
        assert_eq!(seq.char_count(), 7);
        assert_eq!(t.decode(&seq.ids).unwrap(), "héllo ✓".as_bytes());
    }

    #[test]
    fn words_roundtrip_and_serialize() {
        let text = "The cat, the  hat.\nAnd: the end!";
        let t = Tokenizer::words_from_corpus([text]);
        let seq = t.encode(text).unwrap();
        assert_eq!(t.decode(&seq.ids).unwrap(), text.as_bytes());
        let json = serde_json::to_string(&t).unwrap();
        let back: Tokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(t.encode("unseen").is_err());
    }
}
