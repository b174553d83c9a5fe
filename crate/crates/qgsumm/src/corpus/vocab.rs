use crate::error::{QgError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const TI: u32 = 4;
pub const SEP: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["[PAD]", "[BOS]", "[EOS]", "[UNK]", "[TI]", "[SEP]"];

/// Closed word-level vocabulary with reserved special ids 0-5.
/// Built from the training split; out-of-vocabulary words map to `[UNK]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Build from token streams: words ranked by (frequency desc, token asc),
    /// truncated to `max_size` total entries including the specials.
    pub fn build<'a>(texts: impl Iterator<Item = &'a [String]>, max_size: usize) -> Result<Self> {
        if max_size <= SPECIAL_TOKENS.len() {
            return Err(QgError::Config(format!(
                "vocabulary max_size {max_size} leaves no room beyond the {} specials",
                SPECIAL_TOKENS.len()
            )));
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for text in texts {
            for tok in text {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIAL_TOKENS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - SPECIAL_TOKENS.len());

        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { id_to_token, token_to_id })
    }

    /// Vocabulary size `vs`, including specials.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn tokenize(&self, words: &[String]) -> Vec<u32> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn tokenize_str(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }
}
