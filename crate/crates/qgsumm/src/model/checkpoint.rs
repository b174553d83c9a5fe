//! Checkpoint format: JSON document holding config, vocabulary, and all
//! parameters as shape + flat f64 arrays. Loading validates every parameter
//! name and shape against a fresh initialization from the stored config.

use crate::corpus::io::{read_json, write_json};
use crate::error::{QgError, Result};
use crate::model::config::ModelConfig;
use crate::model::seq2seq::Seq2SeqModel;
use crate::substrate::params::ParamStore;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub vocab: crate::corpus::vocab::Vocabulary,
    pub params: ParamStore,
}

pub fn save_model(path: &Path, model: &Seq2SeqModel) -> Result<()> {
    let ckpt = ModelCheckpoint {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        params: model.params.clone(),
    };
    write_json(path, &ckpt)
}

pub fn load_model(path: &Path) -> Result<Seq2SeqModel> {
    let ckpt: ModelCheckpoint = read_json(path)?;
    let reference = Seq2SeqModel::init(ckpt.config.clone(), ckpt.vocab.clone(), 0)?;
    validate_params(path, &reference.params, &ckpt.params)?;
    Ok(Seq2SeqModel { config: reference.config, vocab: ckpt.vocab, params: ckpt.params })
}

/// Every expected parameter must be present with the right shape, and no
/// stray parameters are allowed.
pub fn validate_params(path: &Path, expected: &ParamStore, loaded: &ParamStore) -> Result<()> {
    for (name, p) in expected.iter() {
        if !loaded.contains(name) {
            return Err(QgError::Validation(format!(
                "checkpoint {}: missing parameter {name}",
                path.display()
            )));
        }
        let got = loaded.get(name).shape();
        let want = p.value.shape();
        if got != want {
            return Err(QgError::Validation(format!(
                "checkpoint {}: parameter {name} has shape {got:?}, expected {want:?}",
                path.display()
            )));
        }
    }
    if loaded.len() != expected.len() {
        let stray: Vec<&str> =
            loaded.names().filter(|n| !expected.contains(n)).collect();
        return Err(QgError::Validation(format!(
            "checkpoint {}: unexpected parameters {stray:?}",
            path.display()
        )));
    }
    Ok(())
}
