//! QGSumm: query-guided self-supervised summarization of clinical nursing
//! notes, end to end on the CPU.
//!
//! The crate provides a synthetic EHR corpus generator, a small
//! encoder-decoder transformer with temporal and patient-information
//! augmentation, frozen query responders, the three-stage training pipeline
//! built on a straight-through Gumbel-softmax generation path, and the
//! evaluation protocol (concept recall/FDR, predictiveness, extractive
//! baselines, manual-score aggregation).

pub mod corpus;
pub mod error;
pub mod model;
pub mod substrate;

pub use error::{QgError, Result};
