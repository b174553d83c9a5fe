//! Synthetic EHR corpus generator.
//!
//! Stands in for a real clinical database: note text is assembled from
//! sentence templates that embed concept phrases correlated with the
//! patient's phenotype labels, a designated set of risk phrases correlated
//! with 30-day readmission, and per-note day markers that make
//! consecutive-note prediction learnable. All sampling is driven by streams
//! derived from (seed, split, admission index), so regeneration is
//! byte-identical and admissions are independent.

use crate::corpus::lexicon::ConceptLexicon;
use crate::corpus::types::{
    Admission, CorpusSplit, Gender, NursingNote, PatientRecord, PHENOTYPE_CLASSES,
};
use crate::error::{QgError, Result};
use crate::substrate::rng::stream;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub train_admissions: usize,
    pub val_admissions: usize,
    pub test_admissions: usize,
    /// Inclusive range for nursing notes per admission (discharge summary extra).
    pub notes_per_admission: (usize, usize),
    /// Inclusive target token range per note.
    pub note_tokens: (usize, usize),
    pub phrases_per_class: usize,
    pub background_concepts: usize,
    /// Probability that an abbreviatable word is emitted in short form.
    pub abbreviation_rate: f64,
    /// Fraction of admissions carrying the readmission-risk concept.
    pub risk_admission_rate: f64,
    pub readmit_base_prob: f64,
    pub readmit_risk_boost: f64,
    pub readmit_per_extra_phenotype: f64,
    pub max_phenotypes_per_patient: usize,
    /// Force this phenotype on every patient (generator statistics tests).
    pub force_phenotype: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            train_admissions: 400,
            val_admissions: 50,
            test_admissions: 50,
            notes_per_admission: (2, 12),
            note_tokens: (50, 120),
            phrases_per_class: 4,
            background_concepts: 24,
            abbreviation_rate: 0.15,
            risk_admission_rate: 0.3,
            readmit_base_prob: 0.08,
            readmit_risk_boost: 0.55,
            readmit_per_extra_phenotype: 0.05,
            max_phenotypes_per_patient: 3,
            force_phenotype: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phrases_per_class == 0 {
            return Err(QgError::Config("phrases_per_class must be >= 1".into()));
        }
        if self.notes_per_admission.0 < 1 || self.notes_per_admission.0 > self.notes_per_admission.1
        {
            return Err(QgError::Config(format!(
                "invalid notes_per_admission range {:?}",
                self.notes_per_admission
            )));
        }
        if self.note_tokens.0 < 20 || self.note_tokens.0 > self.note_tokens.1 {
            return Err(QgError::Config(format!(
                "invalid note_tokens range {:?} (minimum 20)",
                self.note_tokens
            )));
        }
        if self.max_phenotypes_per_patient == 0
            || self.max_phenotypes_per_patient > PHENOTYPE_CLASSES
        {
            return Err(QgError::Config(format!(
                "max_phenotypes_per_patient {} out of 1..={PHENOTYPE_CLASSES}",
                self.max_phenotypes_per_patient
            )));
        }
        if let Some(k) = self.force_phenotype {
            if k >= PHENOTYPE_CLASSES {
                return Err(QgError::Config(format!(
                    "force_phenotype {k} out of 0..{PHENOTYPE_CLASSES}"
                )));
            }
        }
        for (name, v) in [
            ("abbreviation_rate", self.abbreviation_rate),
            ("risk_admission_rate", self.risk_admission_rate),
            ("readmit_base_prob", self.readmit_base_prob),
            ("readmit_risk_boost", self.readmit_risk_boost),
            ("readmit_per_extra_phenotype", self.readmit_per_extra_phenotype),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QgError::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

const CONDITIONS: [&str; PHENOTYPE_CLASSES] = [
    "sepsis", "pneumonia", "asthma", "copd", "hypertension", "diabetes", "arrhythmia", "anemia",
    "stroke", "delirium", "pancreatitis", "cirrhosis", "nephritis", "hypotension", "cellulitis",
    "fracture", "seizure", "migraine", "colitis", "embolism", "edema", "ischemia", "neuropathy",
    "dermatitis", "thyroiditis",
];

const CLASS_PHRASE_PATTERNS: [&str; 4] = ["{c}", "acute {c}", "chronic {c}", "{c} flare"];

const BACKGROUND_PHRASES: [&str; 24] = [
    "vitals stable",
    "iv fluids",
    "pain control",
    "diet advanced",
    "physical therapy",
    "wound care",
    "oxygen support",
    "telemetry monitor",
    "blood pressure",
    "heart rate",
    "medication review",
    "mobility plan",
    "fall precautions",
    "skin intact",
    "fluid balance",
    "lab draw",
    "care conference",
    "family update",
    "sleep hygiene",
    "bowel regimen",
    "glucose check",
    "line placement",
    "drain output",
    "nutrition consult",
];

const RISK_PHRASES: [&str; 4] = [
    "unresolved infection",
    "poor compliance",
    "unstable discharge",
    "recurrent decline",
];

const SIGNAL_INTROS: [&str; 5] =
    ["reports", "assessment shows", "continues with", "monitoring for", "exam reveals"];
const SIGNAL_TAILS: [&str; 5] = ["this shift", "overnight", "since morning", "at present", "today"];
const STATUS_WORDS: [&str; 5] = ["maintained", "ongoing", "reviewed", "unchanged", "as ordered"];
const FILLER_ADJS: [&str; 6] = ["comfortable", "alert", "oriented", "resting", "stable", "afebrile"];

/// Build the concept lexicon the generator draws phrases from: one phrase
/// family per phenotype class, shared background concepts, and the risk set.
pub fn build_lexicon(cfg: &GeneratorConfig) -> Result<ConceptLexicon> {
    let mut lex = ConceptLexicon::new();
    for (k, cond) in CONDITIONS.iter().enumerate() {
        for (p, pattern) in CLASS_PHRASE_PATTERNS.iter().take(cfg.phrases_per_class).enumerate() {
            let phrase = pattern.replace("{c}", cond);
            lex.insert(&phrase, &format!("C{k:02}_{p}"))?;
        }
    }
    for (i, phrase) in BACKGROUND_PHRASES.iter().take(cfg.background_concepts).enumerate() {
        lex.insert(phrase, &format!("B{i:02}"))?;
    }
    for (i, phrase) in RISK_PHRASES.iter().enumerate() {
        lex.insert(phrase, &format!("R{i}"))?;
    }
    Ok(lex)
}

/// Concept-id prefix for phrases of a phenotype class (tests and the
/// label-signal sanity check key on this).
pub fn class_concept_prefix(class: usize) -> String {
    format!("C{class:02}_")
}

pub fn generate_corpus(cfg: &GeneratorConfig, seed: u64) -> Result<(CorpusSplit, ConceptLexicon)> {
    cfg.validate()?;
    if cfg.phrases_per_class > CLASS_PHRASE_PATTERNS.len() {
        return Err(QgError::Config(format!(
            "phrases_per_class {} exceeds available patterns {}",
            cfg.phrases_per_class,
            CLASS_PHRASE_PATTERNS.len()
        )));
    }
    if cfg.background_concepts > BACKGROUND_PHRASES.len() {
        return Err(QgError::Config(format!(
            "background_concepts {} exceeds available phrases {}",
            cfg.background_concepts,
            BACKGROUND_PHRASES.len()
        )));
    }
    let lexicon = build_lexicon(cfg)?;

    let mut split = CorpusSplit::default();
    let mut counter = 0usize;
    for (split_idx, (count, bucket)) in [
        (cfg.train_admissions, &mut split.train),
        (cfg.val_admissions, &mut split.validation),
        (cfg.test_admissions, &mut split.test),
    ]
    .into_iter()
    .enumerate()
    {
        for local in 0..count {
            let mut rng = stream(seed, "corpus-admission", &[split_idx as u64, local as u64]);
            bucket.push(generate_admission(cfg, counter, &mut rng));
            counter += 1;
        }
    }
    Ok((split, lexicon))
}

fn generate_admission(cfg: &GeneratorConfig, index: usize, rng: &mut impl Rng) -> Admission {
    let admission_id = format!("a{index:05}");
    let patient_id = format!("p{index:05}");

    // phenotype labels: 1..=max classes, optionally forcing one
    let n_phen = rng.random_range(1..=cfg.max_phenotypes_per_patient);
    let mut classes: Vec<usize> = Vec::new();
    if let Some(k) = cfg.force_phenotype {
        classes.push(k);
    }
    while classes.len() < n_phen {
        let k = rng.random_range(0..PHENOTYPE_CLASSES);
        if !classes.contains(&k) {
            classes.push(k);
        }
    }
    classes.sort_unstable();
    let mut phenotype_labels = vec![false; PHENOTYPE_CLASSES];
    for &k in &classes {
        phenotype_labels[k] = true;
    }

    let risky = rng.random::<f64>() < cfg.risk_admission_rate;
    let p_readmit = (cfg.readmit_base_prob
        + cfg.readmit_per_extra_phenotype * (classes.len().saturating_sub(1)) as f64
        + if risky { cfg.readmit_risk_boost } else { 0.0 })
    .clamp(0.0, 0.95);
    let readmitted_30d = rng.random::<f64>() < p_readmit;

    // metadata: diagnosis codes derived from phenotype classes plus noise
    let mut diagnosis_codes: Vec<String> = classes.iter().map(|k| format!("d{}", 100 + k)).collect();
    for _ in 0..rng.random_range(0..=2) {
        diagnosis_codes.push(format!("d{}", 200 + rng.random_range(0..50)));
    }
    let procedure_codes: Vec<String> =
        (0..rng.random_range(0..=3)).map(|_| format!("p{}", 10 + rng.random_range(0..30))).collect();

    let record = PatientRecord {
        patient_id: patient_id.clone(),
        admission_id: admission_id.clone(),
        gender: if rng.random::<f64>() < 0.5 { Gender::F } else { Gender::M },
        age_years: rng.random_range(18..=95),
        diagnosis_codes,
        procedure_codes,
        phenotype_labels,
        readmitted_30d,
    };

    let n_notes = rng.random_range(cfg.notes_per_admission.0..=cfg.notes_per_admission.1);
    let mut notes = Vec::with_capacity(n_notes);
    // Rotate through the patient's classes across signal slots so every class
    // phrase shows up in (nearly) every note.
    let mut class_cursor = rng.random_range(0..classes.len());
    for i in 0..n_notes {
        let target_len = rng.random_range(cfg.note_tokens.0..=cfg.note_tokens.1);
        let text = note_text(cfg, rng, &classes, &mut class_cursor, risky, i + 1, target_len);
        notes.push(NursingNote {
            admission_id: admission_id.clone(),
            patient_id: patient_id.clone(),
            seq_index: (i + 1) as u32,
            text,
            is_discharge_summary: false,
        });
    }

    let discharge_text = discharge_text(cfg, rng, &classes, risky, n_notes + 1);
    let discharge = Some(NursingNote {
        admission_id,
        patient_id,
        seq_index: (n_notes + 1) as u32,
        text: discharge_text,
        is_discharge_summary: true,
    });

    Admission { record, notes, discharge }
}

fn class_phrase(cfg: &GeneratorConfig, rng: &mut impl Rng, class: usize) -> String {
    let p = rng.random_range(0..cfg.phrases_per_class);
    CLASS_PHRASE_PATTERNS[p].replace("{c}", CONDITIONS[class])
}

fn push_words(out: &mut Vec<String>, phrase: &str) {
    out.extend(phrase.split_whitespace().map(str::to_string));
}

fn abbreviatable(rng: &mut impl Rng, rate: f64, short: &str, long: &str) -> String {
    if rng.random::<f64>() < rate {
        short.to_string()
    } else {
        long.to_string()
    }
}

fn note_text(
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
    classes: &[usize],
    class_cursor: &mut usize,
    risky: bool,
    day: usize,
    target_len: usize,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(target_len + 12);
    push_words(&mut out, &format!("day {day} of admission ."));
    let mut sentence = 0usize;
    let mut risk_emitted = false;
    while out.len() < target_len {
        match sentence % 4 {
            // signal sentence carrying one of the patient's class phrases
            0 | 2 => {
                let class = classes[*class_cursor % classes.len()];
                *class_cursor += 1;
                let subject = abbreviatable(rng, cfg.abbreviation_rate, "pt", "patient");
                let intro = SIGNAL_INTROS.choose(rng).unwrap();
                let tail = SIGNAL_TAILS.choose(rng).unwrap();
                let phrase = class_phrase(cfg, rng, class);
                push_words(&mut out, &format!("{subject} {intro} {phrase} {tail} ."));
            }
            1 => {
                let bg = BACKGROUND_PHRASES[..cfg.background_concepts].choose(rng).unwrap();
                let status = STATUS_WORDS.choose(rng).unwrap();
                push_words(&mut out, &format!("{bg} {status} ."));
            }
            _ => {
                if risky && !risk_emitted && rng.random::<f64>() < 0.8 {
                    let phrase = RISK_PHRASES.choose(rng).unwrap();
                    push_words(&mut out, &format!("concern for {phrase} noted ."));
                    risk_emitted = true;
                } else {
                    let system = match rng.random_range(0..3) {
                        0 => abbreviatable(rng, cfg.abbreviation_rate, "resp", "respiratory"),
                        1 => abbreviatable(rng, cfg.abbreviation_rate, "cv", "cardiovascular"),
                        _ => "neuro".to_string(),
                    };
                    let a = FILLER_ADJS.choose(rng).unwrap();
                    let b = FILLER_ADJS.choose(rng).unwrap();
                    push_words(&mut out, &format!("{system} status {a} and {b} ."));
                }
            }
        }
        sentence += 1;
    }
    out
}

fn discharge_text(
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
    classes: &[usize],
    risky: bool,
    day: usize,
) -> Vec<String> {
    let mut out = Vec::with_capacity(64);
    push_words(&mut out, &format!("day {day} of admission ."));
    push_words(&mut out, "discharge summary .");
    for &class in classes {
        let phrase = class_phrase(cfg, rng, class);
        push_words(&mut out, &format!("treated for {phrase} during stay ."));
    }
    if risky {
        let phrase = RISK_PHRASES.choose(rng).unwrap();
        push_words(&mut out, &format!("flagged {phrase} at discharge ."));
    }
    while out.len() < 50 {
        let bg = BACKGROUND_PHRASES[..cfg.background_concepts].choose(rng).unwrap();
        let status = STATUS_WORDS.choose(rng).unwrap();
        push_words(&mut out, &format!("{bg} {status} ."));
    }
    push_words(&mut out, "follow up arranged with primary team .");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lexicon::extract_concepts;

    #[test]
    fn fixed_seed_is_byte_identical() {
        let cfg = GeneratorConfig {
            train_admissions: 6,
            val_admissions: 2,
            test_admissions: 2,
            ..Default::default()
        };
        let (a, _) = generate_corpus(&cfg, 13).unwrap();
        let (b, _) = generate_corpus(&cfg, 13).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn zero_admissions_is_a_valid_empty_corpus() {
        let cfg = GeneratorConfig {
            train_admissions: 0,
            val_admissions: 0,
            test_admissions: 0,
            ..Default::default()
        };
        let (split, lexicon) = generate_corpus(&cfg, 1).unwrap();
        assert!(split.train.is_empty() && split.validation.is_empty() && split.test.is_empty());
        assert!(!lexicon.is_empty());
        split.validate_disjoint().unwrap();
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let cfg = GeneratorConfig { phrases_per_class: 0, ..Default::default() };
        assert!(generate_corpus(&cfg, 1).is_err());
        let cfg = GeneratorConfig { notes_per_admission: (5, 2), ..Default::default() };
        assert!(generate_corpus(&cfg, 1).is_err());
        let cfg = GeneratorConfig { abbreviation_rate: 1.5, ..Default::default() };
        assert!(generate_corpus(&cfg, 1).is_err());
    }

    #[test]
    fn forced_phenotype_phrases_cover_most_notes() {
        let cfg = GeneratorConfig {
            train_admissions: 150,
            val_admissions: 0,
            test_admissions: 0,
            force_phenotype: Some(7),
            ..Default::default()
        };
        let (split, lexicon) = generate_corpus(&cfg, 99).unwrap();
        let prefix = class_concept_prefix(7);
        let mut with = 0usize;
        let mut total = 0usize;
        for adm in &split.train {
            for note in &adm.notes {
                total += 1;
                let found = extract_concepts(&note.text, &lexicon);
                if found.iter().any(|c| c.starts_with(&prefix)) {
                    with += 1;
                }
            }
        }
        let rate = with as f64 / total as f64;
        assert!(rate > 0.9, "class-7 phrase coverage {rate} over {total} notes");
    }

    #[test]
    fn structure_invariants_hold() {
        let cfg = GeneratorConfig {
            train_admissions: 20,
            val_admissions: 5,
            test_admissions: 5,
            ..Default::default()
        };
        let (split, _) = generate_corpus(&cfg, 5).unwrap();
        split.validate_disjoint().unwrap();
        for (_, admissions) in split.splits() {
            for adm in admissions {
                adm.record.validate().unwrap();
                assert!(adm.record.phenotype_labels.iter().any(|b| *b));
                let n = adm.notes.len();
                assert!((2..=12).contains(&n));
                for (i, note) in adm.notes.iter().enumerate() {
                    assert_eq!(note.seq_index as usize, i + 1);
                    assert!(note.token_count() >= 50);
                    assert!(!note.is_discharge_summary);
                }
                let d = adm.discharge.as_ref().unwrap();
                assert!(d.is_discharge_summary);
                assert_eq!(d.seq_index as usize, n + 1);
            }
        }
    }
}
