//! Synthetic corpus generation, ingestion, preprocessing, metadata rendering,
//! tokenization, and concept extraction.

pub mod generate;
pub mod io;
pub mod lexicon;
pub mod metadata;
pub mod preprocess;
pub mod types;
pub mod vocab;

pub use generate::{generate_corpus, GeneratorConfig};
pub use lexicon::{extract_concepts, ConceptLexicon};
pub use metadata::metadata_to_text;
pub use preprocess::{preprocess, PreprocessRules};
pub use types::{Admission, CorpusSplit, Gender, NursingNote, PatientRecord, PHENOTYPE_CLASSES};
pub use vocab::Vocabulary;
