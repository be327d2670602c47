//! Forward pass of the cross-modal encoder-decoder.

use super::{AssembledInput, Bound, ModelConfig, ModelParams, RoIFeature};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::vocab::TokenId;

/// Parameters bound to one tape, plus the config that shaped them.
pub struct Network<'a> {
    cfg: &'a ModelConfig,
    bound: Bound,
}

impl<'a> Network<'a> {
    pub fn bind<T: Scalar>(params: &'a ModelParams, tape: &mut Tape<T>) -> Self {
        Self {
            cfg: params.config(),
            bound: params.bind(tape),
        }
    }

    /// Like [`Network::bind`] but with explicit parameter values.
    pub fn bind_values<T: Scalar>(
        params: &'a ModelParams,
        tape: &mut Tape<T>,
        values: &std::collections::BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        Ok(Self {
            cfg: params.config(),
            bound: params.bind_values(tape, values)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    fn p(&self, name: &str) -> Var {
        self.bound.var(name)
    }

    fn linear<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }

    fn norm<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let g = self.p(&format!("{name}.gain"));
        let b = self.p(&format!("{name}.bias"));
        Ok(tape.layer_norm(x, g, b)?)
    }

    fn dropout<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, rng: &mut SeededRng) -> Result<Var> {
        Ok(tape.dropout(x, self.cfg.dropout_rate, rng)?)
    }

    /// Token embeddings at text positions and projected RoI features at
    /// visual slots, before positions are added. Masked regions are
    /// zero-filled ahead of the projection.
    pub fn content_embedding<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: &AssembledInput,
        rois: &[RoIFeature],
    ) -> Result<Var> {
        if input.visual_slots.len() != rois.len() {
            return Err(Error::data(format!(
                "{} visual slots but {} RoI features",
                input.visual_slots.len(),
                rois.len()
            )));
        }
        let dv = self.cfg.d_visual;
        let visual = if rois.is_empty() {
            None
        } else {
            let mut feats = Vec::with_capacity(rois.len() * dv);
            for (i, r) in rois.iter().enumerate() {
                if r.feat.len() != dv {
                    return Err(Error::data(format!(
                        "RoI {i} has feature width {}, model expects {dv}",
                        r.feat.len()
                    )));
                }
                if input.mrm_regions.contains(&i) {
                    feats.extend(std::iter::repeat_n(T::zero(), dv));
                } else {
                    feats.extend(r.feat.iter().map(|&x| T::lit(x as f64)));
                }
            }
            let f = tape.constant(Tensor::new(vec![rois.len(), dv], feats)?);
            Some(self.linear(tape, f, "embed.visual")?)
        };

        let mut slot_of = vec![None; input.enc_len()];
        for (roi, &pos) in input.visual_slots.iter().enumerate() {
            slot_of[pos] = Some(roi);
        }
        let table = self.p("embed.tokens");
        let mut pieces = Vec::new();
        let mut pos = 0;
        while pos < input.enc_len() {
            if let Some(roi) = slot_of[pos] {
                let mut end = roi + 1;
                while pos + (end - roi) < input.enc_len() && slot_of[pos + (end - roi)] == Some(end) {
                    end += 1;
                }
                let v = visual.expect("visual slots imply RoIs");
                pieces.push(tape.slice_rows(v, roi, end - roi)?);
                pos += end - roi;
            } else {
                let start = pos;
                while pos < input.enc_len() && slot_of[pos].is_none() {
                    pos += 1;
                }
                let ids: Vec<usize> = input.enc_ids[start..pos].iter().map(|&t| t as usize).collect();
                pieces.push(tape.gather_rows(table, &ids)?);
            }
        }
        Ok(tape.concat_rows(&pieces)?)
    }

    fn add_positions<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, table: &str) -> Result<Var> {
        let len = tape.shape(x)[0];
        if len > self.cfg.max_positions {
            return Err(Error::data(format!(
                "sequence length {len} exceeds max_positions {}",
                self.cfg.max_positions
            )));
        }
        let idx: Vec<usize> = (0..len).collect();
        let pos = tape.gather_rows(self.p(table), &idx)?;
        Ok(tape.add(x, pos)?)
    }

    /// Encoder input embedding: content plus learned absolute positions.
    pub fn embed<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: &AssembledInput,
        rois: &[RoIFeature],
    ) -> Result<Var> {
        let x = self.content_embedding(tape, input, rois)?;
        self.add_positions(tape, x, "embed.enc_pos")
    }

    fn attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        name: &str,
        query: Var,
        memory: Var,
        allowed: &[bool],
    ) -> Result<Var> {
        let q = self.linear(tape, query, &format!("{name}.q"))?;
        let k = self.linear(tape, memory, &format!("{name}.k"))?;
        let v = self.linear(tape, memory, &format!("{name}.v"))?;
        let dh = self.cfg.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_masked(scores, Some(allowed))?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        self.linear(tape, cat, &format!("{name}.o"))
    }

    fn ffn<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(tape, x, &format!("{name}.in"))?;
        let h = tape.gelu(h);
        self.linear(tape, h, &format!("{name}.out"))
    }

    fn residual<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, branch: Var, rng: &mut SeededRng) -> Result<Var> {
        let b = self.dropout(tape, branch, rng)?;
        Ok(tape.add(x, b)?)
    }

    /// Bidirectional pre-norm encoder stack over non-pad positions.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        embedded: Var,
        valid: &[bool],
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let t = valid.len();
        let allowed: Vec<bool> = (0..t * t).map(|i| valid[i % t]).collect();
        let mut x = self.dropout(tape, embedded, rng)?;
        for l in 0..self.cfg.n_enc_layers {
            let p = format!("encoder.layers.{l}");
            let h = self.norm(tape, x, &format!("{p}.attn_norm"))?;
            let a = self.attention(tape, &format!("{p}.self_attn"), h, h, &allowed)?;
            x = self.residual(tape, x, a, rng)?;
            let h = self.norm(tape, x, &format!("{p}.ffn_norm"))?;
            let f = self.ffn(tape, h, &format!("{p}.ffn"))?;
            x = self.residual(tape, x, f, rng)?;
        }
        self.norm(tape, x, "encoder.final_norm")
    }

    /// Causal decoder with cross-attention to the encoder output.
    pub fn decode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        dec_ids: &[TokenId],
        dec_valid: &[bool],
        encoded: Var,
        enc_valid: &[bool],
        rng: &mut SeededRng,
    ) -> Result<Var> {
        if dec_ids.is_empty() {
            return Err(Error::data("decoder input is empty"));
        }
        let l = dec_ids.len();
        let s = enc_valid.len();
        let causal: Vec<bool> = (0..l * l)
            .map(|i| {
                let (r, c) = (i / l, i % l);
                c <= r && dec_valid[c]
            })
            .collect();
        let cross: Vec<bool> = (0..l * s).map(|i| enc_valid[i % s]).collect();
        let ids: Vec<usize> = dec_ids.iter().map(|&t| t as usize).collect();
        let tok = tape.gather_rows(self.p("embed.tokens"), &ids)?;
        let x = self.add_positions(tape, tok, "embed.dec_pos")?;
        let mut x = self.dropout(tape, x, rng)?;
        for layer in 0..self.cfg.n_dec_layers {
            let p = format!("decoder.layers.{layer}");
            let h = self.norm(tape, x, &format!("{p}.self_attn_norm"))?;
            let a = self.attention(tape, &format!("{p}.self_attn"), h, h, &causal)?;
            x = self.residual(tape, x, a, rng)?;
            let h = self.norm(tape, x, &format!("{p}.cross_attn_norm"))?;
            let c = self.attention(tape, &format!("{p}.cross_attn"), h, encoded, &cross)?;
            x = self.residual(tape, x, c, rng)?;
            let h = self.norm(tape, x, &format!("{p}.ffn_norm"))?;
            let f = self.ffn(tape, h, &format!("{p}.ffn"))?;
            x = self.residual(tape, x, f, rng)?;
        }
        self.norm(tape, x, "decoder.final_norm")
    }

    /// Embedding, encoder and decoder for one assembled example.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: &AssembledInput,
        rois: &[RoIFeature],
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let e = self.embed(tape, input, rois)?;
        let enc = self.encode(tape, e, &input.enc_valid, rng)?;
        self.decode(tape, &input.dec_input, &input.dec_valid, enc, &input.enc_valid, rng)
    }

    /// Vocabulary logits, tied to the token embedding matrix.
    pub fn lm_head<T: Scalar>(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Var> {
        let logits = tape.matmul_nt(hidden, self.p("embed.tokens"))?;
        Ok(tape.add_row(logits, self.p("heads.lm.bias"))?)
    }

    fn mlp<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(tape, x, &format!("{name}.hidden"))?;
        let h = tape.gelu(h);
        self.linear(tape, h, &format!("{name}.out"))
    }

    /// Detector-class logits for region rows.
    pub fn mrm_head<T: Scalar>(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Var> {
        self.mlp(tape, hidden, "heads.mrm")
    }

    pub fn ap_head<T: Scalar>(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Var> {
        self.mlp(tape, hidden, "heads.ap")
    }

    /// Relation logits from `[subject ; object]` rows of width `2·d_model`.
    pub fn rp_head<T: Scalar>(&self, tape: &mut Tape<T>, pairs: Var) -> Result<Var> {
        self.mlp(tape, pairs, "heads.rp")
    }
}
