//! Corpus serialization: JSONL note/patient files per split plus the shared
//! concept lexicon. Any external corpus matching this layout can replace the
//! generator (real-data users must pre-filter newborn and in-hospital
//! mortality admissions themselves).

use crate::corpus::lexicon::ConceptLexicon;
use crate::corpus::types::{Admission, CorpusSplit, NursingNote, PatientRecord};
use crate::error::{QgError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Wire form of a note row: text joined with single spaces.
#[derive(Debug, Serialize, Deserialize)]
struct NoteRow {
    admission_id: String,
    patient_id: String,
    seq_index: u32,
    text: String,
    is_discharge_summary: bool,
}

impl From<&NursingNote> for NoteRow {
    fn from(n: &NursingNote) -> Self {
        NoteRow {
            admission_id: n.admission_id.clone(),
            patient_id: n.patient_id.clone(),
            seq_index: n.seq_index,
            text: n.text.join(" "),
            is_discharge_summary: n.is_discharge_summary,
        }
    }
}

impl From<NoteRow> for NursingNote {
    fn from(r: NoteRow) -> Self {
        NursingNote {
            admission_id: r.admission_id,
            patient_id: r.patient_id,
            seq_index: r.seq_index,
            text: r.text.split_whitespace().map(str::to_string).collect(),
            is_discharge_summary: r.is_discharge_summary,
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        let line = serde_json::to_string(&row).map_err(|e| QgError::json(path, e))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| QgError::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| QgError::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| QgError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| QgError::json(path, e))?);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| QgError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| QgError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| QgError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| QgError::json(path, e))
}

/// Layout: `<dir>/<split>/notes.jsonl`, `<dir>/<split>/patients.jsonl`,
/// `<dir>/lexicon.json`.
pub fn write_corpus(dir: &Path, split: &CorpusSplit, lexicon: &ConceptLexicon) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| QgError::io(dir, e))?;
    for (name, admissions) in split.splits() {
        let split_dir = dir.join(name);
        fs::create_dir_all(&split_dir).map_err(|e| QgError::io(&split_dir, e))?;
        let notes = admissions.iter().flat_map(|a| {
            a.notes.iter().chain(a.discharge.as_ref()).map(NoteRow::from)
        });
        write_jsonl(&split_dir.join("notes.jsonl"), notes)?;
        write_jsonl(
            &split_dir.join("patients.jsonl"),
            admissions.iter().map(|a| &a.record),
        )?;
    }
    write_json(&dir.join("lexicon.json"), lexicon)
}

pub fn read_corpus(dir: &Path) -> Result<(CorpusSplit, ConceptLexicon)> {
    let lexicon: ConceptLexicon = read_json(&dir.join("lexicon.json"))?;
    let mut corpus = CorpusSplit::default();
    for (name, bucket) in [
        ("train", &mut corpus.train),
        ("validation", &mut corpus.validation),
        ("test", &mut corpus.test),
    ] {
        let split_dir = dir.join(name);
        if !split_dir.exists() {
            continue;
        }
        let records: Vec<PatientRecord> = read_jsonl(&split_dir.join("patients.jsonl"))?;
        let rows: Vec<NoteRow> = read_jsonl(&split_dir.join("notes.jsonl"))?;
        *bucket = assemble(records, rows.into_iter().map(NursingNote::from).collect())?;
    }
    corpus.validate_disjoint()?;
    Ok((corpus, lexicon))
}

fn assemble(records: Vec<PatientRecord>, notes: Vec<NursingNote>) -> Result<Vec<Admission>> {
    let mut by_admission: BTreeMap<String, Vec<NursingNote>> = BTreeMap::new();
    for note in notes {
        by_admission.entry(note.admission_id.clone()).or_default().push(note);
    }
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        record.validate()?;
        let mut notes = by_admission.remove(&record.admission_id).unwrap_or_default();
        notes.sort_by_key(|n| n.seq_index);
        let discharge_idx = notes.iter().position(|n| n.is_discharge_summary);
        let discharge = discharge_idx.map(|i| notes.remove(i));
        for (i, n) in notes.iter().enumerate() {
            if n.seq_index as usize != i + 1 {
                return Err(QgError::Validation(format!(
                    "admission {}: seq_index {} at position {} is not contiguous",
                    record.admission_id,
                    n.seq_index,
                    i + 1
                )));
            }
        }
        out.push(Admission { record, notes, discharge });
    }
    if let Some(orphan) = by_admission.keys().next() {
        return Err(QgError::Validation(format!(
            "notes reference admission {orphan} with no patient record"
        )));
    }
    Ok(out)
}

/// Write the flat per-document metric CSV (`note_id, recall, fdr, length_ratio`).
pub fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for row in rows {
        out.extend_from_slice(row.as_bytes());
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| QgError::io(path, e))?;
    file.write_all(&out).map_err(|e| QgError::io(path, e))
}
