use serde::{Deserialize, Serialize};

/// Number of phenotype classes; the label vector length is fixed.
pub const PHENOTYPE_CLASSES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

/// Patient/admission metadata plus the query labels derived from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub admission_id: String,
    pub gender: Gender,
    pub age_years: u32,
    pub diagnosis_codes: Vec<String>,
    pub procedure_codes: Vec<String>,
    /// Exactly `PHENOTYPE_CLASSES` booleans.
    pub phenotype_labels: Vec<bool>,
    pub readmitted_30d: bool,
}

impl PatientRecord {
    pub fn validate(&self) -> crate::Result<()> {
        if self.phenotype_labels.len() != PHENOTYPE_CLASSES {
            return Err(crate::QgError::Validation(format!(
                "patient {}: phenotype vector length {} != {PHENOTYPE_CLASSES}",
                self.patient_id,
                self.phenotype_labels.len()
            )));
        }
        Ok(())
    }
}

/// One nursing note (or discharge summary) as a token list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NursingNote {
    pub admission_id: String,
    pub patient_id: String,
    /// Position among the admission's notes, time-ordered, 1-based and
    /// contiguous. The discharge summary carries the index after the last
    /// nursing note.
    pub seq_index: u32,
    pub text: Vec<String>,
    pub is_discharge_summary: bool,
}

impl NursingNote {
    /// Stable identifier used for fold assignment and summary files.
    pub fn note_id(&self) -> String {
        format!("{}:{}", self.admission_id, self.seq_index)
    }

    pub fn token_count(&self) -> usize {
        self.text.len()
    }
}

/// An admission: its record, time-ordered nursing notes, and the discharge
/// summary when present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Admission {
    pub record: PatientRecord,
    pub notes: Vec<NursingNote>,
    pub discharge: Option<NursingNote>,
}

impl Admission {
    pub fn id(&self) -> &str {
        &self.record.admission_id
    }
}

/// Train/validation/test admissions. Admission ids are disjoint across splits.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<Admission>,
    pub validation: Vec<Admission>,
    pub test: Vec<Admission>,
}

impl CorpusSplit {
    pub fn split(&self, name: &str) -> crate::Result<&[Admission]> {
        match name {
            "train" => Ok(&self.train),
            "validation" | "val" => Ok(&self.validation),
            "test" => Ok(&self.test),
            other => Err(crate::QgError::Validation(format!("unknown split {other}"))),
        }
    }

    pub fn splits(&self) -> [(&'static str, &[Admission]); 3] {
        [
            ("train", self.train.as_slice()),
            ("validation", self.validation.as_slice()),
            ("test", self.test.as_slice()),
        ]
    }

    /// Check that no admission id appears in two splits.
    pub fn validate_disjoint(&self) -> crate::Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (split, admissions) in self.splits() {
            for a in admissions {
                if !seen.insert(a.id().to_string()) {
                    return Err(crate::QgError::Validation(format!(
                        "admission {} appears in more than one split (second: {split})",
                        a.id()
                    )));
                }
            }
        }
        Ok(())
    }
}
