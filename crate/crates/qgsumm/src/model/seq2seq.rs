//! Encoder-decoder transformer with temporal-information fusion and the
//! patient-information cross-attention branch.

use crate::corpus::vocab::{Vocabulary, BOS, PAD};
use crate::error::{QgError, Result};
use crate::model::blocks::{
    attention_with_kv, encoder_layer, ffn, init_attention, init_encoder_layer, init_ffn,
    init_layer_norm, init_matrix, layer_norm, linear, multi_head_attention, project_kv, INIT_STD,
};
use crate::model::config::ModelConfig;
use crate::substrate::graph::{Graph, Var};
use crate::substrate::ops;
use crate::substrate::params::{bind, ParamStore};
use crate::substrate::tensor::Tensor;

/// How the decoder mixes the patient-information branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiaMode {
    /// Compute the branch and scale by lambda2 (even when it is 0).
    Scaled(f64),
    /// The branch is absent entirely (ablation / no-metadata stages).
    Disabled,
}

/// Encoder output: full hidden matrix plus the note-start token's embedding.
pub struct EncodedNote {
    pub h_enc: Var,
    pub first: Var,
}

pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl Seq2SeqModel {
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut config = config;
        config.vs = vocab.size();
        config.validate()?;
        let mut params = ParamStore::new();
        params.insert("emb.tok", init_matrix(seed, "emb.tok", config.vs, config.d, INIT_STD));
        params.insert(
            "emb.pos",
            init_matrix(seed, "emb.pos", config.pos_table_len(), config.d, INIT_STD),
        );
        for l in 0..config.n_layers_enc {
            init_encoder_layer(&mut params, seed, &format!("enc.{l}"), config.d, config.ff_dim);
        }
        for l in 0..config.n_layers_dec {
            let p = format!("dec.{l}");
            init_attention(&mut params, seed, &format!("{p}.self"), config.d);
            init_layer_norm(&mut params, &format!("{p}.ln1"), config.d);
            init_attention(&mut params, seed, &format!("{p}.cross_enc"), config.d);
            init_attention(&mut params, seed, &format!("{p}.cross_pa"), config.d);
            init_layer_norm(&mut params, &format!("{p}.ln2"), config.d);
            init_ffn(&mut params, seed, &format!("{p}.ff"), config.d, config.ff_dim);
            init_layer_norm(&mut params, &format!("{p}.ln3"), config.d);
        }
        Ok(Seq2SeqModel { config, vocab, params })
    }

    /// Token embeddings plus learned positions starting at `pos_offset`.
    pub fn embed_tokens(&self, g: &mut Graph, tokens: &[u32], pos_offset: usize) -> Result<Var> {
        let table = bind(g, &self.params, "emb.tok");
        let pos = bind(g, &self.params, "emb.pos");
        let emb = g.embed_rows(table, tokens)?;
        let p = g.slice_rows(pos, pos_offset, tokens.len())?;
        g.add(emb, p)
    }

    /// Embed a one-hot (or soft) vocabulary distribution row and add the
    /// positional embedding for `position`.
    pub fn embed_onehot(&self, g: &mut Graph, onehot: Var, position: usize) -> Result<Var> {
        let table = bind(g, &self.params, "emb.tok");
        let pos = bind(g, &self.params, "emb.pos");
        let emb = g.matmul(onehot, table)?;
        let p = g.slice_rows(pos, position, 1)?;
        g.add(emb, p)
    }

    /// Standard transformer encoder. `tokens[0]` must be the note-start
    /// special; over-length input is rejected (callers truncate explicitly).
    pub fn encode(&self, g: &mut Graph, tokens: &[u32]) -> Result<EncodedNote> {
        if tokens.is_empty() || tokens.len() > self.config.max_note_len {
            return Err(QgError::Validation(format!(
                "encoder input length {} outside 1..={}",
                tokens.len(),
                self.config.max_note_len
            )));
        }
        if tokens[0] != BOS {
            return Err(QgError::Validation(
                "encoder input must start with the note-start special token".into(),
            ));
        }
        let mut x = self.embed_tokens(g, tokens, 0)?;
        for l in 0..self.config.n_layers_enc {
            x = encoder_layer(g, &self.params, &format!("enc.{l}"), x, self.config.n_heads)?;
        }
        let first = g.slice_rows(x, 0, 1)?;
        Ok(EncodedNote { h_enc: x, first })
    }

    /// First-token embedding of a note under the current encoder, computed in
    /// a throwaway graph (used for temporal-history vectors, which enter the
    /// training graph as constants).
    pub fn encode_first_detached(&self, tokens: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, tokens)?;
        Ok(g.value(enc.first).clone())
    }

    /// Temporal-information fusion: position-weighted average of past-note
    /// embeddings (weights 1..n normalized). An empty history yields the
    /// [PAD] token embedding.
    pub fn tif_vector(&self, g: &mut Graph, history: &[Var]) -> Result<Var> {
        if history.is_empty() {
            let table = bind(g, &self.params, "emb.tok");
            return g.embed_rows(table, &[PAD]);
        }
        let weights = tif_weights(history.len());
        let mut acc = g.scale(history[0], weights[0])?;
        for (h, w) in history.iter().zip(weights.iter()).skip(1) {
            let term = g.scale(*h, *w)?;
            acc = g.add(acc, term)?;
        }
        Ok(acc)
    }

    /// Tied language-modeling head: logits = h · emb_tokᵀ.
    pub fn lm_logits(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        let table = bind(g, &self.params, "emb.tok");
        g.matmul_transb(hidden, table)
    }

    fn pia_active(&self, layer: usize, pia: PiaMode, has_pa: bool) -> Option<f64> {
        match pia {
            PiaMode::Disabled => None,
            PiaMode::Scaled(lambda2) => {
                if has_pa && self.config.pia_layers.applies_to(layer, self.config.n_layers_dec) {
                    Some(lambda2)
                } else {
                    None
                }
            }
        }
    }

    /// One decoder layer body shared by the full and incremental paths:
    /// cross-attention sublayer output = MHCA(H_enc, ·) [+ lambda2 * MHCA(H_PA, ·)],
    /// wrapped in the usual residual/norm/feed-forward structure.
    #[allow(clippy::too_many_arguments)]
    fn decoder_layer_tail(
        &self,
        g: &mut Graph,
        layer: usize,
        x_sa: Var,
        enc_kv: (Var, Var),
        pa_kv: Option<(Var, Var)>,
        pia: PiaMode,
    ) -> Result<Var> {
        let p = format!("dec.{layer}");
        let heads = self.config.n_heads;
        let ce = attention_with_kv(
            g,
            &self.params,
            &format!("{p}.cross_enc"),
            x_sa,
            enc_kv.0,
            enc_kv.1,
            heads,
            None,
        )?;
        let cross = match (pa_kv, self.pia_active(layer, pia, pa_kv.is_some())) {
            (Some((kp, vp)), Some(lambda2)) => {
                let cp = attention_with_kv(
                    g,
                    &self.params,
                    &format!("{p}.cross_pa"),
                    x_sa,
                    kp,
                    vp,
                    heads,
                    None,
                )?;
                let scaled = g.scale(cp, lambda2)?;
                g.add(ce, scaled)?
            }
            _ => ce,
        };
        let res = g.add(x_sa, cross)?;
        let x = layer_norm(g, &self.params, &format!("{p}.ln2"), res)?;
        let ff = ffn(g, &self.params, &format!("{p}.ff"), x)?;
        let res = g.add(x, ff)?;
        layer_norm(g, &self.params, &format!("{p}.ln3"), res)
    }

    /// Teacher-forced decoder over a full input (causal self-attention).
    /// `rows` is the already-embedded decoder input; returns final hidden.
    pub fn decode_full(
        &self,
        g: &mut Graph,
        h_enc: Var,
        h_pa: Option<Var>,
        rows: Var,
        pia: PiaMode,
    ) -> Result<Var> {
        let t = g.value(rows).rows();
        if t > self.config.max_summary_len + 2 && t > self.config.max_note_len + 2 {
            return Err(QgError::Validation(format!(
                "decoder input of {t} rows exceeds the configured maxima"
            )));
        }
        let mask = g.constant(ops::causal_mask(t));
        let mut x = rows;
        for l in 0..self.config.n_layers_dec {
            let p = format!("dec.{l}");
            let sa = multi_head_attention(
                g,
                &self.params,
                &format!("{p}.self"),
                x,
                x,
                self.config.n_heads,
                Some(mask),
            )?;
            let res = g.add(x, sa)?;
            let x_sa = layer_norm(g, &self.params, &format!("{p}.ln1"), res)?;
            let enc_kv = project_kv(g, &self.params, &format!("{p}.cross_enc"), h_enc)?;
            let pa_kv = match h_pa {
                Some(pa) => Some(project_kv(g, &self.params, &format!("{p}.cross_pa"), pa)?),
                None => None,
            };
            x = self.decoder_layer_tail(g, l, x_sa, enc_kv, pa_kv, pia)?;
        }
        Ok(x)
    }

    /// Start incremental decoding: pre-project cross-attention keys/values.
    pub fn begin_decode(
        &self,
        g: &mut Graph,
        h_enc: Var,
        h_pa: Option<Var>,
        pia: PiaMode,
    ) -> Result<DecoderState> {
        let n_layers = self.config.n_layers_dec;
        let mut cross_enc = Vec::with_capacity(n_layers);
        let mut cross_pa = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let p = format!("dec.{l}");
            cross_enc.push(project_kv(g, &self.params, &format!("{p}.cross_enc"), h_enc)?);
            cross_pa.push(match h_pa {
                Some(pa) => Some(project_kv(g, &self.params, &format!("{p}.cross_pa"), pa)?),
                None => None,
            });
        }
        Ok(DecoderState {
            len: 0,
            self_k: vec![Vec::new(); n_layers],
            self_v: vec![Vec::new(); n_layers],
            cross_enc,
            cross_pa,
            pia,
        })
    }

    /// Push one embedded input row through the decoder, reusing cached
    /// prefix state; returns next-token logits (1 x vs) from the last row
    /// of the final hidden state.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        state: &mut DecoderState,
        input_row: Var,
    ) -> Result<Var> {
        if state.len >= self.config.max_summary_len + 2 {
            return Err(QgError::Validation(format!(
                "decoder prefix would exceed max_summary_len + 2 = {}",
                self.config.max_summary_len + 2
            )));
        }
        let heads = self.config.n_heads;
        let mut x = input_row;
        for l in 0..self.config.n_layers_dec {
            let p = format!("dec.{l}");
            let (k_new, v_new) = project_kv(g, &self.params, &format!("{p}.self"), x)?;
            state.self_k[l].push(k_new);
            state.self_v[l].push(v_new);
            let k_all = g.concat_rows(&state.self_k[l])?;
            let v_all = g.concat_rows(&state.self_v[l])?;
            let sa = attention_with_kv(
                g,
                &self.params,
                &format!("{p}.self"),
                x,
                k_all,
                v_all,
                heads,
                None,
            )?;
            let res = g.add(x, sa)?;
            let x_sa = layer_norm(g, &self.params, &format!("{p}.ln1"), res)?;
            x = self.decoder_layer_tail(g, l, x_sa, state.cross_enc[l], state.cross_pa[l], state.pia)?;
        }
        state.len += 1;
        self.lm_logits(g, x)
    }

    /// Teacher-forced loss: decode `targets` (content token ids) against the
    /// encoded source, with mean token-level cross-entropy over the targets
    /// plus the end-of-sequence position. Returns (loss, correct, total).
    pub fn teacher_forced_loss(
        &self,
        g: &mut Graph,
        enc_tokens: &[u32],
        targets: &[u32],
        h_tif: Option<Var>,
    ) -> Result<(Var, usize, usize)> {
        use crate::corpus::vocab::EOS;
        if targets.is_empty() {
            return Err(QgError::Validation("teacher_forced_loss: empty targets".into()));
        }
        if targets.len() + 2 > self.config.pos_table_len() {
            return Err(QgError::Validation(format!(
                "target length {} exceeds positional table",
                targets.len()
            )));
        }
        let enc = self.encode(g, enc_tokens)?;

        // Decoder input: [TI] [BOS] t_0 .. t_{m-1}; the [TI] slot carries the
        // temporal vector when given, else the [PAD] embedding.
        let mut dec_ids = Vec::with_capacity(targets.len() + 2);
        dec_ids.push(PAD);
        dec_ids.push(BOS);
        dec_ids.extend_from_slice(targets);
        let mut rows = self.embed_tokens(g, &dec_ids, 0)?;
        if let Some(tif) = h_tif {
            let pos = bind(g, &self.params, "emb.pos");
            let p0 = g.slice_rows(pos, 0, 1)?;
            let row0 = g.add(tif, p0)?;
            let rest = g.slice_rows(rows, 1, dec_ids.len() - 1)?;
            rows = g.concat_rows(&[row0, rest])?;
        }

        let hidden = self.decode_full(g, enc.h_enc, None, rows, PiaMode::Disabled)?;
        let logits = self.lm_logits(g, hidden)?;
        let m = targets.len();
        let pred_logits = g.slice_rows(logits, 1, m + 1)?;
        let probs = g.softmax_rows(pred_logits)?;

        let mut expected: Vec<u32> = targets.to_vec();
        expected.push(EOS);
        let mut onehot = Tensor::zeros(m + 1, self.config.vs);
        for (r, &id) in expected.iter().enumerate() {
            onehot.set(r, id as usize, 1.0);
        }
        let target_mat = g.constant(onehot);
        let clamped = g.clamp_min(probs, ops::CE_EPS)?;
        let logp = g.log(clamped)?;
        let picked = g.mul(target_mat, logp)?;
        let total = g.sum_all(picked)?;
        let loss = g.scale(total, -1.0 / (m + 1) as f64)?;

        let mut correct = 0;
        for (r, &id) in expected.iter().enumerate() {
            let row = g.value(probs).row_slice(r);
            if crate::substrate::argmax(row) == id as usize {
                correct += 1;
            }
        }
        Ok((loss, correct, expected.len()))
    }
}

/// Incremental decoding state: per-layer cached self-attention projections
/// plus pre-projected cross-attention keys/values.
pub struct DecoderState {
    pub len: usize,
    self_k: Vec<Vec<Var>>,
    self_v: Vec<Vec<Var>>,
    cross_enc: Vec<(Var, Var)>,
    cross_pa: Vec<Option<(Var, Var)>>,
    pia: PiaMode,
}

/// Normalized temporal weights beta'_j = j / sum(1..n).
pub fn tif_weights(n: usize) -> Vec<f64> {
    let total: f64 = (n * (n + 1) / 2) as f64;
    (1..=n).map(|j| j as f64 / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::Vocabulary;

    fn tiny_model(seed: u64) -> Seq2SeqModel {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::build([words.as_slice()].into_iter(), 64).unwrap();
        let config = ModelConfig {
            d: 16,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 2,
            ff_dim: 32,
            max_note_len: 24,
            max_summary_len: 12,
            ..Default::default()
        };
        Seq2SeqModel::init(config, vocab, seed).unwrap()
    }

    fn enc_input(model: &Seq2SeqModel, words: &[&str]) -> Vec<u32> {
        let mut ids = vec![BOS];
        for w in words {
            ids.push(model.vocab.id(w));
        }
        ids
    }

    #[test]
    fn encode_shape_and_determinism() {
        let model = tiny_model(3);
        let tokens = enc_input(&model, &["w1", "w2", "w3", "w4"]);
        let mut g = Graph::new();
        let e = model.encode(&mut g, &tokens).unwrap();
        assert_eq!(g.value(e.h_enc).shape(), (5, 16));
        assert_eq!(g.value(e.first).shape(), (1, 16));
        let mut g2 = Graph::new();
        let e2 = model.encode(&mut g2, &tokens).unwrap();
        assert_eq!(g.value(e.h_enc).data(), g2.value(e2.h_enc).data());
    }

    #[test]
    fn encode_is_position_sensitive() {
        let model = tiny_model(3);
        let a = enc_input(&model, &["w1", "w2", "w3"]);
        let b = enc_input(&model, &["w2", "w1", "w3"]);
        let mut g = Graph::new();
        let ea = model.encode(&mut g, &a).unwrap();
        let eb = model.encode(&mut g, &b).unwrap();
        let diff: f64 = g
            .value(ea.h_enc)
            .iter()
            .zip(g.value(eb.h_enc).iter())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn encode_rejects_bad_input() {
        let model = tiny_model(3);
        let mut g = Graph::new();
        assert!(model.encode(&mut g, &[]).is_err());
        let long = vec![BOS; 25];
        assert!(model.encode(&mut g, &long).is_err());
        let no_special = vec![model.vocab.id("w1")];
        assert!(model.encode(&mut g, &no_special).is_err());
    }

    #[test]
    fn tif_weights_match_spec_examples() {
        assert_eq!(tif_weights(4), vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(tif_weights(1), vec![1.0]);
    }

    #[test]
    fn tif_single_history_is_identity_and_convexity_holds() {
        let model = tiny_model(3);
        let mut g = Graph::new();
        let h1 = g.constant(Tensor::row(&[1.0; 16]));
        let out = model.tif_vector(&mut g, &[h1]).unwrap();
        assert_eq!(g.value(out).data(), &[1.0; 16]);

        let u = Tensor::row(&[0.75; 16]);
        let hs: Vec<Var> = (0..5).map(|_| g.constant(u.clone())).collect();
        let out = model.tif_vector(&mut g, &hs).unwrap();
        for v in g.value(out).iter() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn tif_empty_history_uses_pad_embedding() {
        let model = tiny_model(3);
        let mut g = Graph::new();
        let out = model.tif_vector(&mut g, &[]).unwrap();
        let expected = model.params.get("emb.tok").row_slice(PAD as usize).to_vec();
        assert_eq!(g.value(out).data(), expected.as_slice());
    }

    #[test]
    fn incremental_decode_matches_full_decode() {
        let model = tiny_model(7);
        let note = enc_input(&model, &["w1", "w5", "w2", "w9", "w3"]);
        let meta = enc_input(&model, &["w4", "w6"]);
        let dec_ids = vec![PAD, BOS, model.vocab.id("w2"), model.vocab.id("w7")];

        let mut g = Graph::new();
        let enc = model.encode(&mut g, &note).unwrap();
        let pa = model.encode(&mut g, &meta).unwrap();
        let pia = PiaMode::Scaled(0.3);

        let rows = model.embed_tokens(&mut g, &dec_ids, 0).unwrap();
        let hidden = model.decode_full(&mut g, enc.h_enc, Some(pa.h_enc), rows, pia).unwrap();
        let full_logits = model.lm_logits(&mut g, hidden).unwrap();

        let mut state = model.begin_decode(&mut g, enc.h_enc, Some(pa.h_enc), pia).unwrap();
        let mut last = None;
        for (t, &id) in dec_ids.iter().enumerate() {
            let row = model.embed_tokens(&mut g, &[id], t).unwrap();
            last = Some(model.decode_step(&mut g, &mut state, row).unwrap());
        }
        let inc_logits = last.unwrap();

        let t = dec_ids.len();
        let full_last = g.slice_rows(full_logits, t - 1, 1).unwrap();
        let max_diff = g
            .value(full_last)
            .iter()
            .zip(g.value(inc_logits).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "incremental vs full logits diff {max_diff}");
    }

    #[test]
    fn pia_null_lambda_zero_equals_disabled() {
        let model = tiny_model(11);
        let note = enc_input(&model, &["w1", "w2", "w3", "w4"]);
        let meta = enc_input(&model, &["w8", "w9", "w10"]);
        let dec_ids = vec![PAD, BOS, model.vocab.id("w5")];

        let mut g = Graph::new();
        let enc = model.encode(&mut g, &note).unwrap();
        let pa = model.encode(&mut g, &meta).unwrap();
        let rows = model.embed_tokens(&mut g, &dec_ids, 0).unwrap();

        let with_zero = {
            let h = model
                .decode_full(&mut g, enc.h_enc, Some(pa.h_enc), rows, PiaMode::Scaled(0.0))
                .unwrap();
            model.lm_logits(&mut g, h).unwrap()
        };
        let disabled = {
            let h = model
                .decode_full(&mut g, enc.h_enc, None, rows, PiaMode::Disabled)
                .unwrap();
            model.lm_logits(&mut g, h).unwrap()
        };
        let max_diff = g
            .value(with_zero)
            .iter()
            .zip(g.value(disabled).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-9, "PIA null check diff {max_diff}");
    }

    #[test]
    fn pia_perturbation_only_matters_with_nonzero_lambda() {
        let model = tiny_model(13);
        let note = enc_input(&model, &["w1", "w2", "w3"]);
        let meta_a = enc_input(&model, &["w4", "w5"]);
        let meta_b = enc_input(&model, &["w6", "w7"]);
        let dec_ids = vec![PAD, BOS];

        let logits_with = |lambda2: f64, meta: &[u32]| {
            let mut g = Graph::new();
            let enc = model.encode(&mut g, &note).unwrap();
            let pa = model.encode(&mut g, meta).unwrap();
            let rows = model.embed_tokens(&mut g, &dec_ids, 0).unwrap();
            let h = model
                .decode_full(&mut g, enc.h_enc, Some(pa.h_enc), rows, PiaMode::Scaled(lambda2))
                .unwrap();
            let l = model.lm_logits(&mut g, h).unwrap();
            g.value(l).data().to_vec()
        };

        let a = logits_with(0.3, &meta_a);
        let b = logits_with(0.3, &meta_b);
        let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "lambda2=0.3 should react to metadata changes");

        let a0 = logits_with(0.0, &meta_a);
        let b0 = logits_with(0.0, &meta_b);
        let diff0: f64 = a0.iter().zip(b0.iter()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff0 <= 1e-12, "lambda2=0 must ignore metadata, diff {diff0}");
    }

    #[test]
    fn decode_step_rejects_overlong_prefix() {
        let model = tiny_model(5);
        let note = enc_input(&model, &["w1"]);
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &note).unwrap();
        let mut state = model.begin_decode(&mut g, enc.h_enc, None, PiaMode::Disabled).unwrap();
        let max_rows = model.config.max_summary_len + 2;
        for t in 0..max_rows {
            let row = model.embed_tokens(&mut g, &[PAD], t).unwrap();
            model.decode_step(&mut g, &mut state, row).unwrap();
        }
        let row = model.embed_tokens(&mut g, &[PAD], 0).unwrap();
        assert!(model.decode_step(&mut g, &mut state, row).is_err());
    }

    #[test]
    fn teacher_forced_loss_is_nonnegative() {
        let model = tiny_model(17);
        let note = enc_input(&model, &["w1", "w2", "w3", "w4", "w5"]);
        let targets: Vec<u32> = ["w1", "w2"].iter().map(|w| model.vocab.id(w)).collect();
        let mut g = Graph::new();
        let (loss, correct, total) =
            model.teacher_forced_loss(&mut g, &note, &targets, None).unwrap();
        assert!(g.value(loss).item() >= 0.0);
        assert_eq!(total, 3);
        assert!(correct <= total);
    }
}
