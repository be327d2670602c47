//! Turns an example into encoder and decoder token layouts.
//!
//! Encoder: `task, <img>, slot × N, </img>, [text block]`, where the text
//! block is `<event> … </event>` for inference tasks and `<mlm> … </mlm>` for
//! masked-modeling examples. The decoder either generates the target
//! (`<s>` + target → target + `</s>`) or mirrors the encoder sequence with
//! `<img_feat>` at visual slots and `<cls>` at masked positions.

use serde::{Deserialize, Serialize};

use crate::data::MultimodalExample;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tasks::{plan_mlm_mask, plan_mrm_mask, MaskAction, Objective};
use crate::vocab::{self, TokenId, Vocabulary};

/// A detected region: raw feature vector and detector class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoIFeature {
    pub feat: Vec<f32>,
    pub class_probs: Vec<f32>,
}

impl RoIFeature {
    pub fn check_distribution(&self) -> std::result::Result<(), String> {
        if self.class_probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err("negative or non-finite probability".into());
        }
        let sum: f32 = self.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(format!("sums to {sum}, expected 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Task,
    Visual,
    Text,
    Pad,
}

/// Encoder/decoder layouts plus the bookkeeping each objective reads.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledInput {
    /// Encoder ids; visual slots hold `<img_feat>` as a placeholder.
    pub enc_ids: Vec<TokenId>,
    pub segments: Vec<Segment>,
    /// Encoder position of each RoI, in RoI order.
    pub visual_slots: Vec<usize>,
    /// False at padding.
    pub enc_valid: Vec<bool>,
    pub dec_input: Vec<TokenId>,
    /// Next-token labels for generation; `None` is ignored.
    pub dec_targets: Vec<Option<TokenId>>,
    pub dec_valid: Vec<bool>,
    /// `(position, original id)` of every masked text token.
    pub mlm: Vec<(usize, TokenId)>,
    /// RoI indices whose features are zero-filled.
    pub mrm_regions: Vec<usize>,
}

impl AssembledInput {
    pub fn enc_len(&self) -> usize {
        self.enc_ids.len()
    }

    pub fn dec_len(&self) -> usize {
        self.dec_input.len()
    }

    /// Right-pads both sides with `pad_id`, marking the new positions invalid.
    pub fn pad_to(&mut self, enc_len: usize, dec_len: usize, pad_id: TokenId) {
        while self.enc_ids.len() < enc_len {
            self.enc_ids.push(pad_id);
            self.segments.push(Segment::Pad);
            self.enc_valid.push(false);
        }
        while self.dec_input.len() < dec_len {
            self.dec_input.push(pad_id);
            self.dec_targets.push(None);
            self.dec_valid.push(false);
        }
    }

    /// Decoder positions of the visual slots (the decoder mirrors the
    /// encoder layout in non-generation modes).
    pub fn region_position(&self, roi: usize) -> usize {
        self.visual_slots[roi]
    }
}

/// Which layout the objectives require.
fn layout_for(objectives: &[Objective]) -> Result<Layout> {
    if objectives.is_empty() {
        return Err(Error::usage("no objective given for input assembly"));
    }
    let kcg = objectives.contains(&Objective::Kcg);
    let masked = objectives.iter().any(|o| matches!(o, Objective::Mlm | Objective::Mrm));
    let region = objectives.iter().any(|o| matches!(o, Objective::Ap | Objective::Rp));
    match (kcg, masked, region) {
        (true, false, false) => Ok(Layout::Generation),
        (false, true, _) => Ok(Layout::Masked),
        (false, false, true) => Ok(Layout::Region),
        _ => Err(Error::usage(format!(
            "objectives {objectives:?} cannot share one input layout"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Generation,
    Masked,
    Region,
}

/// Builds the model input for `example` under `objectives`.
///
/// `use_event` controls whether the event text block is present for
/// inference tasks. Masking draws from `rng`; the generation layout draws
/// nothing.
pub fn assemble_input(
    example: &MultimodalExample,
    vocab: &Vocabulary,
    objectives: &[Objective],
    use_event: bool,
    max_positions: usize,
    rng: &mut SeededRng,
) -> Result<AssembledInput> {
    assemble(example, vocab, objectives, use_event, max_positions, rng, false)
}

/// Generation-layout encoder input with the decoder holding only `<s>`;
/// the target text is ignored.
pub fn assemble_prompt(
    example: &MultimodalExample,
    vocab: &Vocabulary,
    use_event: bool,
    max_positions: usize,
) -> Result<AssembledInput> {
    let mut rng = crate::rng::seeded(0, 0);
    assemble(example, vocab, &[Objective::Kcg], use_event, max_positions, &mut rng, true)
}

fn assemble(
    example: &MultimodalExample,
    vocab: &Vocabulary,
    objectives: &[Objective],
    use_event: bool,
    max_positions: usize,
    rng: &mut SeededRng,
    prompt_only: bool,
) -> Result<AssembledInput> {
    let layout = layout_for(objectives)?;
    if layout == Layout::Generation && !example.task.is_generation() {
        return Err(Error::data(format!(
            "task `{}` is not an inference task",
            example.task
        )));
    }
    let n = example.rois.len();
    let mut enc_ids = vec![example.task.token(), vocab::IMG];
    let mut segments = vec![Segment::Task, Segment::Visual];
    let visual_slots: Vec<usize> = (2..2 + n).collect();
    enc_ids.extend(std::iter::repeat_n(vocab::IMG_FEAT, n));
    segments.extend(std::iter::repeat_n(Segment::Visual, n));
    enc_ids.push(vocab::IMG_END);
    segments.push(Segment::Visual);

    let mut text_positions = Vec::new();
    let text = match layout {
        Layout::Generation if use_event => example
            .event_text
            .as_deref()
            .map(|e| (vocab::EVENT, vocab.encode(e), vocab::EVENT_END)),
        Layout::Masked if !example.target_text.trim().is_empty() => Some((
            vocab::MLM,
            vocab.encode(&example.target_text),
            vocab::MLM_END,
        )),
        _ => None,
    };
    if let Some((open, body, close)) = text {
        enc_ids.push(open);
        segments.push(Segment::Text);
        for id in body {
            text_positions.push(enc_ids.len());
            enc_ids.push(id);
            segments.push(Segment::Text);
        }
        enc_ids.push(close);
        segments.push(Segment::Text);
    }

    let (dec_input, dec_targets, mlm, mrm_regions) = match layout {
        Layout::Generation if prompt_only => (vec![vocab::BOS], vec![None], Vec::new(), Vec::new()),
        Layout::Generation => {
            let target = vocab.encode(&example.target_text);
            if target.is_empty() {
                return Err(Error::data("empty target"));
            }
            let mut input = vec![vocab::BOS];
            input.extend_from_slice(&target);
            let mut labels: Vec<Option<TokenId>> = target.into_iter().map(Some).collect();
            labels.push(Some(vocab::EOS));
            (input, labels, Vec::new(), Vec::new())
        }
        Layout::Masked | Layout::Region => {
            let mut mlm = Vec::new();
            let mut mrm = Vec::new();
            let mut dec = enc_ids.clone();
            if objectives.contains(&Objective::Mlm) {
                let eligible: Vec<usize> = text_positions
                    .iter()
                    .copied()
                    .filter(|&p| !vocab::is_reserved(enc_ids[p]))
                    .collect();
                let plan = plan_mlm_mask(&eligible, vocab.len(), rng);
                for m in plan.tokens {
                    mlm.push((m.position, enc_ids[m.position]));
                    match m.action {
                        MaskAction::Mask => enc_ids[m.position] = vocab::MASK,
                        MaskAction::Random(id) => enc_ids[m.position] = id,
                        MaskAction::Keep => {}
                    }
                    dec[m.position] = vocab::CLS;
                }
            }
            if objectives.contains(&Objective::Mrm) {
                mrm = plan_mrm_mask(n, rng).regions;
            }
            for (roi, &slot) in visual_slots.iter().enumerate() {
                dec[slot] = if mrm.contains(&roi) {
                    vocab::CLS
                } else {
                    vocab::IMG_FEAT
                };
            }
            let labels = vec![None; dec.len()];
            (dec, labels, mlm, mrm)
        }
    };

    let longest = enc_ids.len().max(dec_input.len());
    if longest > max_positions {
        return Err(Error::data(format!(
            "assembled sequence of length {longest} exceeds max_positions {max_positions}"
        )));
    }
    let enc_valid = vec![true; enc_ids.len()];
    let dec_valid = vec![true; dec_input.len()];
    Ok(AssembledInput {
        enc_ids,
        segments,
        visual_slots,
        enc_valid,
        dec_input,
        dec_targets,
        dec_valid,
        mlm,
        mrm_regions,
    })
}
