//! Autoregressive summary generation with greedy, straight-through Gumbel,
//! and soft-forward (gradient-check) modes.

use crate::corpus::vocab::{Vocabulary, BOS, EOS, PAD, TI};
use crate::error::{QgError, Result};
use crate::model::seq2seq::{PiaMode, Seq2SeqModel};
use crate::substrate::graph::{Graph, Var};
use crate::substrate::gumbel::{argmax, gumbel_noise};
use crate::substrate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    /// Deterministic argmax decoding.
    Greedy,
    /// Hard one-hot forward, soft-branch backward.
    StGumbel,
    /// Soft distributions fed forward; makes the whole generation path smooth
    /// for finite-difference verification.
    SoftGumbel,
}

/// Inputs to one summary generation.
pub struct GenInputs<'a> {
    /// Source note token ids, already prefixed with the note-start special.
    pub note_tokens: &'a [u32],
    /// Rendered patient-metadata token ids (note-start prefixed); None
    /// disables the patient-information branch entirely.
    pub metadata_tokens: Option<&'a [u32]>,
    /// Detached first-token embeddings of the patient's previous notes.
    pub history: &'a [Tensor],
    /// Override for the patient-information weight (defaults to the model's).
    pub lambda2: Option<f64>,
}

/// One generated summary with its differentiable token path.
pub struct Generated {
    /// Emitted token ids, including the final [EOS] when one was produced.
    pub ids: Vec<u32>,
    /// Per emitted token, the representation fed downstream (hard one-hot in
    /// greedy/straight-through modes, the soft distribution in soft mode).
    pub reps: Vec<Var>,
    /// Soft distributions from the Gumbel modes (empty for greedy).
    pub softs: Vec<Var>,
    pub ended_with_eos: bool,
}

impl Generated {
    /// Number of content tokens: emitted ids excluding [TI]/[BOS]/[EOS]/[PAD].
    pub fn content_len(&self) -> usize {
        self.ids.iter().filter(|&&id| id != TI && id != BOS && id != EOS && id != PAD).count()
    }

    /// Representations the responder consumes: the trailing [EOS] is dropped
    /// unless that would leave the document empty.
    pub fn responder_reps(&self) -> &[Var] {
        if self.ended_with_eos && self.reps.len() > 1 {
            &self.reps[..self.reps.len() - 1]
        } else {
            &self.reps
        }
    }

    pub fn content_ids(&self) -> Vec<u32> {
        if self.ended_with_eos && !self.ids.is_empty() {
            self.ids[..self.ids.len() - 1].to_vec()
        } else {
            self.ids.clone()
        }
    }

    pub fn text(&self, vocab: &Vocabulary) -> Vec<String> {
        vocab.detokenize(&self.content_ids())
    }
}

impl Seq2SeqModel {
    /// Generate a summary. The decoder is seeded with [[TI], [BOS]]; the [TI]
    /// slot carries the fused history embedding (or the [PAD] embedding when
    /// the history is empty) and stays in the prefix for every step. The loop
    /// ends at [EOS] or `max_summary_len` emitted tokens.
    ///
    /// `forced_ids` replays a fixed token sequence through the sampling path
    /// (gradient checks); it must only be used with a Gumbel mode.
    pub fn generate(
        &self,
        g: &mut Graph,
        inputs: &GenInputs<'_>,
        mode: GenMode,
        mut rng: Option<&mut ChaCha8Rng>,
        forced_ids: Option<&[u32]>,
    ) -> Result<Generated> {
        if mode != GenMode::Greedy && rng.is_none() {
            return Err(QgError::Validation(
                "gumbel generation modes require a seeded rng".into(),
            ));
        }
        let enc = self.encode(g, inputs.note_tokens)?;
        let h_pa = match inputs.metadata_tokens {
            Some(meta) => Some(self.encode(g, meta)?.h_enc),
            None => None,
        };
        let lambda2 = inputs.lambda2.unwrap_or(self.config.lambda2);
        let pia = if h_pa.is_some() { PiaMode::Scaled(lambda2) } else { PiaMode::Disabled };

        let history_vars: Vec<Var> =
            inputs.history.iter().map(|t| g.constant(t.clone())).collect();
        let h_tif = self.tif_vector(g, &history_vars)?;

        let mut state = self.begin_decode(g, enc.h_enc, h_pa, pia)?;

        // [TI] row: temporal embedding at position 0.
        let pos0 = {
            let pos = crate::substrate::params::bind(g, &self.params, "emb.pos");
            g.slice_rows(pos, 0, 1)?
        };
        let ti_row = g.add(h_tif, pos0)?;
        let _ = self.decode_step(g, &mut state, ti_row)?;
        let bos_row = self.embed_tokens(g, &[BOS], 1)?;
        let mut logits = self.decode_step(g, &mut state, bos_row)?;

        let mut out = Generated { ids: Vec::new(), reps: Vec::new(), softs: Vec::new(), ended_with_eos: false };
        for t in 0..self.config.max_summary_len {
            let (id, rep) = match mode {
                GenMode::Greedy => {
                    let id = argmax(g.value(logits).data()) as u32;
                    let rep = g.constant(Tensor::one_hot(self.config.vs, id as usize));
                    (id, rep)
                }
                GenMode::StGumbel | GenMode::SoftGumbel => {
                    let rng = rng.as_deref_mut().unwrap();
                    let noise = g.constant(gumbel_noise(rng, self.config.vs));
                    let noisy = g.add(logits, noise)?;
                    let scaled = g.scale(noisy, 1.0 / self.config.tau)?;
                    let soft = g.softmax_rows(scaled)?;
                    let id = match forced_ids {
                        Some(f) => f[t],
                        None => argmax(g.value(soft).data()) as u32,
                    };
                    out.softs.push(soft);
                    let rep = match mode {
                        GenMode::StGumbel => {
                            g.straight_through(Tensor::one_hot(self.config.vs, id as usize), soft)?
                        }
                        _ => soft,
                    };
                    (id, rep)
                }
            };
            out.ids.push(id);
            out.reps.push(rep);
            if id == EOS {
                out.ended_with_eos = true;
                break;
            }
            if t + 1 == self.config.max_summary_len {
                break;
            }
            let row = match mode {
                GenMode::Greedy => self.embed_tokens(g, &[id], t + 2)?,
                _ => self.embed_onehot(g, rep, t + 2)?,
            };
            logits = self.decode_step(g, &mut state, row)?;
        }
        Ok(out)
    }
}
