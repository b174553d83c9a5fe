//! Concept lexicon and greedy longest-match phrase extraction.

use crate::error::{QgError, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const MAX_PHRASE_TOKENS: usize = 4;

/// Surface phrases (1-4 lowercase tokens) mapped to concept ids.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConceptLexicon {
    entries: BTreeMap<String, String>,
}

impl ConceptLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: &str, concept_id: &str) -> Result<()> {
        let normalized = phrase.to_lowercase();
        let n_tokens = normalized.split_whitespace().count();
        if n_tokens == 0 || n_tokens > MAX_PHRASE_TOKENS {
            return Err(QgError::Validation(format!(
                "lexicon phrase {phrase:?} must be 1-{MAX_PHRASE_TOKENS} tokens"
            )));
        }
        if self.entries.contains_key(&normalized) {
            return Err(QgError::Validation(format!("duplicate lexicon phrase {normalized:?}")));
        }
        self.entries.insert(normalized, concept_id.to_string());
        Ok(())
    }

    pub fn get(&self, phrase: &str) -> Option<&str> {
        self.entries.get(&phrase.to_lowercase()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(p, c)| (p.as_str(), c.as_str()))
    }

    pub fn concept_ids(&self) -> BTreeSet<&str> {
        self.entries.values().map(String::as_str).collect()
    }

    /// Token-level trie for longest-match scanning.
    pub fn trie(&self) -> PhraseTrie {
        let mut trie = PhraseTrie::default();
        for (phrase, concept) in &self.entries {
            trie.insert(phrase, concept);
        }
        trie
    }
}

#[derive(Debug, Default)]
struct TrieNode {
    children: BTreeMap<String, TrieNode>,
    concept: Option<String>,
}

#[derive(Debug, Default)]
pub struct PhraseTrie {
    root: TrieNode,
}

impl PhraseTrie {
    fn insert(&mut self, phrase: &str, concept: &str) {
        let mut node = &mut self.root;
        for tok in phrase.split_whitespace() {
            node = node.children.entry(tok.to_string()).or_default();
        }
        node.concept = Some(concept.to_string());
    }

    /// Longest phrase match starting at `tokens[start]`; returns
    /// (token length, concept id).
    fn longest_at<'a>(&'a self, tokens: &[String], start: usize) -> Option<(usize, &'a str)> {
        let mut node = &self.root;
        let mut best: Option<(usize, &str)> = None;
        for (offset, tok) in tokens[start..].iter().take(MAX_PHRASE_TOKENS).enumerate() {
            match node.children.get(tok) {
                Some(next) => {
                    node = next;
                    if let Some(c) = &node.concept {
                        best = Some((offset + 1, c.as_str()));
                    }
                }
                None => break,
            }
        }
        best
    }
}

/// Greedy longest-match left-to-right concept extraction, case-insensitive.
/// Returns the set of matched concept ids (duplicates collapse).
pub fn extract_concepts(tokens: &[String], lexicon: &ConceptLexicon) -> BTreeSet<String> {
    let trie = lexicon.trie();
    extract_concepts_with_trie(tokens, &trie)
}

/// Same as [`extract_concepts`] but reusing a prebuilt trie.
pub fn extract_concepts_with_trie(tokens: &[String], trie: &PhraseTrie) -> BTreeSet<String> {
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut found = BTreeSet::new();
    let mut pos = 0;
    while pos < lowered.len() {
        match trie.longest_at(&lowered, pos) {
            Some((len, concept)) => {
                found.insert(concept.to_string());
                pos += len;
            }
            None => pos += 1,
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn simple_match_and_set_semantics() {
        let mut lex = ConceptLexicon::new();
        lex.insert("chest pain", "C1").unwrap();
        let found = extract_concepts(&toks("woke with chest pain again chest pain noted"), &lex);
        assert_eq!(found, ["C1".to_string()].into_iter().collect());
    }

    #[test]
    fn longest_match_shadows_prefix() {
        let mut lex = ConceptLexicon::new();
        lex.insert("chest", "C2").unwrap();
        lex.insert("chest pain", "C1").unwrap();
        let found = extract_concepts(&toks("chest pain"), &lex);
        assert_eq!(found, ["C1".to_string()].into_iter().collect());
        // bare "chest" elsewhere still matches
        let found = extract_concepts(&toks("chest pain and chest clear"), &lex);
        assert_eq!(found.len(), 2);
    }

    #[test]
    fn case_insensitive() {
        let mut lex = ConceptLexicon::new();
        lex.insert("Chest Pain", "C1").unwrap();
        assert_eq!(extract_concepts(&toks("CHEST PAIN"), &lex).len(), 1);
    }

    #[test]
    fn rejects_bad_phrases() {
        let mut lex = ConceptLexicon::new();
        assert!(lex.insert("", "C0").is_err());
        assert!(lex.insert("a b c d e", "C0").is_err());
        lex.insert("a b", "C1").unwrap();
        assert!(lex.insert("a b", "C2").is_err());
    }
}
