//! Whitespace/punctuation tokenizer and corpus vocabulary.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const CLS_ID: usize = 3;
const RESERVED: [&str; 4] = ["[pad]", "[unk]", "[mask]", "[cls]"];

/// Token-to-id map built from a training corpus. Ids are contiguous from 0
/// with the four reserved ids fixed: PAD=0, UNK=1, MASK=2, CLS=3.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens = BTreeSet::new();
        for line in corpus {
            for tok in split_tokens(line) {
                tokens.insert(tok);
            }
        }
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| (*s).to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> usize {
        *self.token_to_id.get(token).unwrap_or(&UNK_ID)
    }

    pub fn token_of(&self, id: usize) -> &str {
        self.id_to_token
            .get(id)
            .map_or("[unk]", |s| s.as_str())
    }

    /// First id that is not one of the reserved specials.
    pub fn first_regular_id(&self) -> usize {
        RESERVED.len()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let map: BTreeMap<&str, usize> = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let json = serde_json::to_string_pretty(&map)?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let raw =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_value(&serde_json::from_str(&raw)?)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let map: BTreeMap<&str, usize> = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        serde_json::to_value(map).expect("string map")
    }

    pub fn from_json_value(value: &serde_json::Value) -> Result<Self> {
        let map: BTreeMap<String, usize> = serde_json::from_value(value.clone())?;
        let mut id_to_token = vec![String::new(); map.len()];
        for (tok, id) in &map {
            if *id >= id_to_token.len() {
                return Err(Error::InvalidData(format!(
                    "vocabulary ids not contiguous: id {id} of {}",
                    id_to_token.len()
                )));
            }
            id_to_token[*id] = tok.clone();
        }
        for (expect, got) in RESERVED.iter().zip(&id_to_token) {
            if expect != got {
                return Err(Error::InvalidData(format!(
                    "vocabulary reserved ids corrupted: expected `{expect}`, got `{got}`"
                )));
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }
}

/// Lowercase and split on whitespace and punctuation; punctuation characters
/// survive as single-character tokens.
pub fn split_tokens(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in raw.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// A prepared note: CLS-prefixed, truncated/padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub raw_text: String,
    pub token_ids: Vec<usize>,
}

impl ClinicalNote {
    /// Attention view: true where a position carries a real token.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.token_ids.iter().map(|&id| id != PAD_ID).collect()
    }

    /// True when the note held no tokens at all (a lone CLS plus padding).
    pub fn is_content_empty(&self) -> bool {
        self.token_ids[1..].iter().all(|&id| id == PAD_ID)
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Tokenize raw text into a fixed-length note. Total: every string, including
/// the empty one, yields a valid note.
pub fn tokenize(raw: &str, vocab: &Vocabulary, max_len: usize) -> ClinicalNote {
    assert!(max_len >= 1, "max_len must allow at least the CLS token");
    let mut ids = vec![CLS_ID];
    for tok in split_tokens(raw) {
        if ids.len() >= max_len {
            break;
        }
        ids.push(vocab.id_of(&tok));
    }
    ids.resize(max_len, PAD_ID);
    ClinicalNote {
        raw_text: raw.to_string(),
        token_ids: ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_whitespace_and_keeps_punctuation() {
        let toks = split_tokens("Wound healing well.");
        assert_eq!(toks, vec!["wound", "healing", "well", "."]);
    }

    #[test]
    fn tokenize_spec_example() {
        let vocab = Vocabulary::build(["wound healing well ."]);
        let note = tokenize("Wound healing well.", &vocab, 8);
        assert_eq!(note.token_ids[0], CLS_ID);
        assert_eq!(note.token_ids[1], vocab.id_of("wound"));
        assert_eq!(note.token_ids[2], vocab.id_of("healing"));
        assert_eq!(note.token_ids[3], vocab.id_of("well"));
        assert_eq!(note.token_ids[4], vocab.id_of("."));
        assert_eq!(&note.token_ids[5..], &[PAD_ID, PAD_ID, PAD_ID]);
    }

    #[test]
    fn unseen_word_maps_to_unk() {
        let vocab = Vocabulary::build(["wound healing"]);
        let note = tokenize("xyzzy wound", &vocab, 4);
        assert_eq!(note.token_ids[1], UNK_ID);
    }

    #[test]
    fn always_pads_to_max_len() {
        let vocab = Vocabulary::build(["a b c"]);
        for raw in ["", "a", "a b c a b c a b c"] {
            let note = tokenize(raw, &vocab, 6);
            assert_eq!(note.len(), 6, "{raw:?}");
        }
    }

    #[test]
    fn empty_input_is_valid_and_flagged() {
        let vocab = Vocabulary::build(["a"]);
        let note = tokenize("", &vocab, 4);
        assert_eq!(note.token_ids, vec![CLS_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert!(note.is_content_empty());
    }

    #[test]
    fn vocab_json_roundtrip() {
        let vocab = Vocabulary::build(["wound healing well .", "odor noted"]);
        let value = vocab.to_json_value();
        let back = Vocabulary::from_json_value(&value).unwrap();
        assert_eq!(back.len(), vocab.len());
        assert_eq!(back.id_of("odor"), vocab.id_of("odor"));
        assert_eq!(back.id_of("[cls]"), CLS_ID);
    }
}
