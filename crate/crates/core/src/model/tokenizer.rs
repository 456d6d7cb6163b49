// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level BPE compatible with the published GPT-2 `vocab.json` /
//! `merges.txt` pair.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use fancy_regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PRETOKENIZE: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

pub const END_OF_TEXT: &str = "<|endoftext|>";

/// Token ids together with the text they were produced from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl AsRef<[u32]> for TokenSequence {
    fn as_ref(&self) -> &[u32] {
        &self.ids
    }
}

pub struct Tokenizer {
    encoder: HashMap<String, u32>,
    decoder: Vec<String>,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    pattern: Regex,
    cache: Mutex<HashMap<String, Vec<u32>>>,
}

impl std::fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tokenizer").field("vocab_size", &self.decoder.len()).field("merges", &self.ranks.len()).finish()
    }
}

/// The reversible byte → printable-char table GPT-2 applies before BPE.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable =
        |b: u32| (b'!' as u32..=b'~' as u32).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
    let mut extra = 0u32;
    for b in 0u32..256 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

impl Tokenizer {
    pub fn from_files(vocab_file: impl AsRef<Path>, merges_file: impl AsRef<Path>) -> Result<Self> {
        let vocab_path = vocab_file.as_ref();
        let merges_path = merges_file.as_ref();
        let vocab = std::fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
        let merges = std::fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        Self::from_strs(&vocab, &merges, &vocab_path.display().to_string(), &merges_path.display().to_string())
    }

    /// The GPT-2 vocabulary shipped in this crate's `assets/gpt2` directory.
    pub fn bundled_gpt2() -> Result<Self> {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join("gpt2");
        Self::from_files(dir.join("vocab.json"), dir.join("merges.txt"))
    }

    pub fn from_strs(vocab: &str, merges: &str, vocab_name: &str, merges_name: &str) -> Result<Self> {
        let malformed = |file: &str, reason: String| Error::Tokenizer { file: file.to_string(), reason };
        let encoder: HashMap<String, u32> =
            serde_json::from_str(vocab).map_err(|e| malformed(vocab_name, e.to_string()))?;
        if encoder.is_empty() {
            return Err(malformed(vocab_name, "empty vocabulary".into()));
        }
        let size = encoder.len();
        let mut decoder = vec![None; size];
        for (tok, &id) in &encoder {
            let slot = decoder
                .get_mut(id as usize)
                .ok_or_else(|| malformed(vocab_name, format!("id {id} outside 0..{size}")))?;
            if slot.is_some() {
                return Err(malformed(vocab_name, format!("duplicate id {id}")));
            }
            *slot = Some(tok.clone());
        }
        let decoder: Vec<String> = decoder.into_iter().map(Option::unwrap).collect();

        let mut ranks = HashMap::new();
        for (lineno, line) in merges.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    ranks.insert((a.to_string(), b.to_string()), ranks.len());
                }
                _ => {
                    return Err(malformed(
                        merges_name,
                        format!("line {}: expected two symbols, got `{line}`", lineno + 1),
                    ))
                }
            }
        }

        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        Ok(Self {
            encoder,
            decoder,
            ranks,
            byte_encoder,
            byte_decoder,
            pattern: Regex::new(PRETOKENIZE).expect("static pattern"),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.encoder.get(token).copied()
    }

    pub fn end_of_text(&self) -> Option<u32> {
        self.token_id(END_OF_TEXT)
    }

    /// Raw vocabulary entry (byte-mapped form, e.g. `ĠBlue`).
    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.decoder.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        for piece in self.pattern.find_iter(text) {
            let piece = piece.expect("pre-tokenizer cannot fail on valid utf-8").as_str();
            let mapped: String = piece.bytes().map(|b| self.byte_encoder[b as usize]).collect();
            ids.extend(self.bpe(&mapped));
        }
        TokenSequence { ids, text: text.to_string() }
    }

    /// Encodes `text` and requires it to be exactly one token.
    pub fn single_token(&self, text: &str) -> Result<u32> {
        let ids = self.encode(text).ids;
        match ids.as_slice() {
            [id] => Ok(*id),
            _ => Err(Error::MultiToken { text: text.to_string(), count: ids.len() }),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter_map(|&id| self.decoder.get(id as usize))
            .flat_map(|tok| tok.chars())
            .filter_map(|c| self.byte_decoder.get(&c).copied())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn bpe(&self, word: &str) -> Vec<u32> {
        if let Some(hit) = self.cache.lock().unwrap().get(word) {
            return hit.clone();
        }
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&rank| (rank, i)))
                .min();
            let Some((_, at)) = best else { break };
            let (a, b) = (parts[at].clone(), parts[at + 1].clone());
            // merge every non-overlapping occurrence of the pair, left to right
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && parts[i] == a && parts[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        let ids: Vec<u32> = parts
            .iter()
            .map(|p| {
                self.encoder.get(p).copied().unwrap_or_else(|| {
                    // every single byte symbol is in the GPT-2 vocabulary
                    self.encoder.get(&p.chars().next().unwrap().to_string()).copied().unwrap_or(0)
                })
            })
            .collect();
        self.cache.lock().unwrap().insert(word.to_string(), ids.clone());
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Tokenizer {
        let vocab = r#"{"a":0,"b":1,"c":2,"Ġ":3,"ab":4,"Ġa":5,"abc":6,"Ġab":7}"#;
        let merges = "#version: 0.2\na b\nĠ a\nab c\nĠ ab\n";
        Tokenizer::from_strs(vocab, merges, "vocab", "merges").unwrap()
    }

    #[test]
    fn applies_merges_by_rank() {
        let t = toy();
        assert_eq!(t.encode("abc").ids, vec![6]);
        assert_eq!(t.encode(" ab").ids, vec![7]);
        assert_eq!(t.encode("ab ab").ids, vec![4, 7]);
        assert_eq!(t.decode(&[4, 7]), "ab ab");
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let table = bytes_to_unicode();
        let mut seen: Vec<char> = table.to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(table[b' ' as usize], 'Ġ');
        assert_eq!(table[b'\n' as usize], 'Ċ');
    }

    #[test]
    fn malformed_files_name_the_file() {
        let err = Tokenizer::from_strs("{not json", "", "vocab.json", "merges.txt").unwrap_err();
        assert!(err.to_string().contains("vocab.json"));
        let err = Tokenizer::from_strs(r#"{"a":0}"#, "a b c\n", "vocab.json", "merges.txt").unwrap_err();
        assert!(err.to_string().contains("merges.txt"));
        let err = Tokenizer::from_strs(r#"{"a":0,"b":0}"#, "", "vocab.json", "merges.txt").unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }
}
