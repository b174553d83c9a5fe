use crate::error::{QgError, Result};
use serde::{Deserialize, Serialize};

/// Which decoder layers receive the patient-information cross-attention branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiaLayers {
    All,
    FirstHalf,
    LastHalf,
}

impl PiaLayers {
    pub fn applies_to(&self, layer: usize, n_layers: usize) -> bool {
        let half = n_layers / 2;
        match self {
            PiaLayers::All => true,
            PiaLayers::FirstHalf => layer < half,
            PiaLayers::LastHalf => layer >= n_layers - half,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    /// Vocabulary size; set from the built vocabulary.
    pub vs: usize,
    pub max_note_len: usize,
    pub max_summary_len: usize,
    /// Patient-information mixing weight, in [0, 1].
    pub lambda2: f64,
    pub pia_layers: PiaLayers,
    /// Gumbel-softmax temperature.
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            ff_dim: 128,
            vs: 0,
            max_note_len: 160,
            max_summary_len: 60,
            lambda2: 0.3,
            pia_layers: PiaLayers::All,
            tau: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(QgError::Config(format!(
                "hidden size {} must be divisible by n_heads {}",
                self.d, self.n_heads
            )));
        }
        if self.max_summary_len > 500 {
            return Err(QgError::Config(format!(
                "max_summary_len {} exceeds the 500-token cap",
                self.max_summary_len
            )));
        }
        if self.vs <= crate::corpus::vocab::SPECIAL_TOKENS.len() {
            return Err(QgError::Config(format!("vocabulary size {} too small", self.vs)));
        }
        if !(0.0..=1.0).contains(&self.lambda2) {
            return Err(QgError::Config(format!("lambda2 {} outside [0, 1]", self.lambda2)));
        }
        if self.tau <= 0.0 {
            return Err(QgError::Config(format!("tau {} must be > 0", self.tau)));
        }
        if self.n_layers_enc == 0 || self.n_layers_dec == 0 {
            return Err(QgError::Config("need at least one encoder and decoder layer".into()));
        }
        Ok(())
    }

    /// Learned positional table length: covers notes and the [TI]/[BOS]-prefixed
    /// decoder input.
    pub fn pos_table_len(&self) -> usize {
        self.max_note_len.max(self.max_summary_len + 2)
    }
}
