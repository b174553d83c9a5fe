//! Note filtering, abbreviation expansion, and re-indexing.

use crate::corpus::types::Admission;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessRules {
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub max_notes_per_admission: usize,
    pub abbreviations: BTreeMap<String, String>,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        let abbreviations = [
            ("pt", "patient"),
            ("cv", "cardiovascular"),
            ("resp", "respiratory"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        PreprocessRules {
            min_tokens: 50,
            max_tokens: 800,
            max_notes_per_admission: 100,
            abbreviations,
        }
    }
}

/// Apply the preprocessing contract:
/// - admissions with more than `max_notes_per_admission` nursing notes are
///   dropped entirely;
/// - nursing notes outside the `[min_tokens, max_tokens]` bounds are dropped;
/// - abbreviations are expanded token-wise (discharge summaries included);
/// - remaining notes are re-indexed contiguously from 1;
/// - admissions left with no nursing notes are dropped.
///
/// The operation is idempotent.
pub fn preprocess(admissions: Vec<Admission>, rules: &PreprocessRules) -> Vec<Admission> {
    let expand = |text: &mut Vec<String>| {
        for tok in text.iter_mut() {
            if let Some(full) = rules.abbreviations.get(tok.as_str()) {
                *tok = full.clone();
            }
        }
    };

    let mut out = Vec::with_capacity(admissions.len());
    for mut adm in admissions {
        if adm.notes.len() > rules.max_notes_per_admission {
            continue;
        }
        adm.notes.retain(|n| {
            let len = n.token_count();
            len >= rules.min_tokens && len <= rules.max_tokens
        });
        if adm.notes.is_empty() {
            continue;
        }
        for (i, note) in adm.notes.iter_mut().enumerate() {
            note.seq_index = (i + 1) as u32;
            expand(&mut note.text);
        }
        let next_index = adm.notes.len() as u32 + 1;
        if let Some(d) = adm.discharge.as_mut() {
            d.seq_index = next_index;
            expand(&mut d.text);
        }
        out.push(adm);
    }
    out
}
