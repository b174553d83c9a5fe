//! Encoder-decoder transformer with the temporal-information and
//! patient-information augmentation blocks, generation, and checkpoints.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod generate;
pub mod seq2seq;

pub use checkpoint::{load_model, save_model, ModelCheckpoint};
pub use config::{ModelConfig, PiaLayers};
pub use generate::{GenInputs, GenMode, Generated};
pub use seq2seq::{tif_weights, DecoderState, EncodedNote, PiaMode, Seq2SeqModel};
