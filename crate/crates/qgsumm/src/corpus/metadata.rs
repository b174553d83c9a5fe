//! Rendering patient metadata as a natural-language token list.

use crate::corpus::types::{Gender, PatientRecord};

/// Deterministic template:
/// `patient is a {age} year old {gender} . diagnoses : {codes} . procedures : {codes} .`
/// Empty code lists render as `none`. Output is lowercase and whitespace-tokenizable.
pub fn metadata_to_text(record: &PatientRecord) -> Vec<String> {
    let gender = match record.gender {
        Gender::F => "female",
        Gender::M => "male",
    };
    let codes = |list: &[String]| -> String {
        if list.is_empty() {
            "none".to_string()
        } else {
            list.join(" ").to_lowercase()
        }
    };
    let text = format!(
        "patient is a {} year old {} . diagnoses : {} . procedures : {} .",
        record.age_years,
        gender,
        codes(&record.diagnosis_codes),
        codes(&record.procedure_codes),
    );
    text.split_whitespace().map(str::to_string).collect()
}
