//! Pretraining objectives: masking plans, the five losses and their
//! weighted combination.
//!
//! Every loss is a per-unit mean over the batch (tokens for generation and
//! masked language modeling, regions for the region objectives, pairs for
//! relations). A term with no units in a batch is omitted, never zero.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultimodalExample;
use crate::error::{Error, Result};
use crate::model::{AssembledInput, Network};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::vocab::{TokenId, N_RESERVED};

pub const MLM_RATE: f32 = 0.15;
pub const MLM_REPLACE_MASK: f32 = 0.8;
pub const MLM_REPLACE_RANDOM: f32 = 0.1;
pub const MRM_RATE: f32 = 0.15;

/// Pretraining objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Knowledge-based commonsense generation.
    Kcg,
    /// Attribute prediction.
    Ap,
    /// Relation prediction.
    Rp,
    /// Masked language modeling.
    Mlm,
    /// Masked region modeling.
    Mrm,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Kcg,
        Objective::Ap,
        Objective::Rp,
        Objective::Mlm,
        Objective::Mrm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Kcg => "kcg",
            Objective::Ap => "ap",
            Objective::Rp => "rp",
            Objective::Mlm => "mlm",
            Objective::Mrm => "mrm",
        }
    }

    /// Whether `example` carries units this objective can train on.
    pub fn accepts(self, example: &MultimodalExample) -> bool {
        use crate::vocab::TaskType;
        match self {
            Objective::Kcg => example.task.is_generation(),
            Objective::Ap => !example.attributes.is_empty(),
            Objective::Rp => !example.relations.is_empty(),
            Objective::Mlm => example.task == TaskType::Caption && !example.target_text.trim().is_empty(),
            Objective::Mrm => example.task == TaskType::Caption && !example.rois.is_empty(),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::usage(format!("unknown task `{s}` (expected kcg, ap, rp, mlm, mrm)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action", content = "token")]
pub enum MaskAction {
    /// Replace with `<mask>`.
    Mask,
    /// Replace with a uniformly drawn regular token.
    Random(TokenId),
    /// Leave the token in place (still predicted).
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedToken {
    pub position: usize,
    #[serde(flatten)]
    pub action: MaskAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub tokens: Vec<MaskedToken>,
    pub regions: Vec<usize>,
}

/// Masks each eligible position with probability 0.15; a masked position
/// becomes `<mask>` (0.8), a random regular token (0.1) or stays (0.1).
///
/// Draw order per position: one uniform for selection, then for selected
/// positions one uniform for the action and, for `Random`, one token draw.
pub fn plan_mlm_mask(positions: &[usize], vocab_size: usize, rng: &mut SeededRng) -> MaskPlan {
    let mut tokens = Vec::new();
    for &position in positions {
        if rng.random::<f32>() >= MLM_RATE {
            continue;
        }
        let u = rng.random::<f32>();
        let action = if u < MLM_REPLACE_MASK {
            MaskAction::Mask
        } else if u < MLM_REPLACE_MASK + MLM_REPLACE_RANDOM && vocab_size > N_RESERVED as usize {
            MaskAction::Random(rng.random_range(N_RESERVED..vocab_size as TokenId))
        } else {
            MaskAction::Keep
        };
        tokens.push(MaskedToken { position, action });
    }
    MaskPlan {
        tokens,
        regions: Vec::new(),
    }
}

/// Masks each of `n` regions independently with probability 0.15.
pub fn plan_mrm_mask(n: usize, rng: &mut SeededRng) -> MaskPlan {
    MaskPlan {
        tokens: Vec::new(),
        regions: (0..n).filter(|_| rng.random::<f32>() < MRM_RATE).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub kcg: f32,
    pub ap: f32,
    pub rp: f32,
    pub mlm: f32,
    pub mrm: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kcg: 1.0,
            ap: 1.0,
            rp: 1.0,
            mlm: 5.0,
            mrm: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, o: Objective) -> f32 {
        match o {
            Objective::Kcg => self.kcg,
            Objective::Ap => self.ap,
            Objective::Rp => self.rp,
            Objective::Mlm => self.mlm,
            Objective::Mrm => self.mrm,
        }
    }
}

/// Per-objective loss values; absent terms had no units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kcg: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rp: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlm: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrm: Option<f32>,
}

impl LossTerms {
    pub fn get(&self, o: Objective) -> Option<f32> {
        match o {
            Objective::Kcg => self.kcg,
            Objective::Ap => self.ap,
            Objective::Rp => self.rp,
            Objective::Mlm => self.mlm,
            Objective::Mrm => self.mrm,
        }
    }

    pub fn set(&mut self, o: Objective, v: Option<f32>) {
        let slot = match o {
            Objective::Kcg => &mut self.kcg,
            Objective::Ap => &mut self.ap,
            Objective::Rp => &mut self.rp,
            Objective::Mlm => &mut self.mlm,
            Objective::Mrm => &mut self.mrm,
        };
        *slot = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(flatten)]
    pub terms: LossTerms,
    pub weights: LossWeights,
    pub total: f32,
}

/// `Σ weight · term` over present terms, accumulated in objective order.
pub fn combine_losses(terms: LossTerms, weights: LossWeights) -> Result<LossBreakdown> {
    let mut total = 0.0f32;
    let mut any = false;
    for o in Objective::ALL {
        if let Some(v) = terms.get(o) {
            total += weights.get(o) * v;
            any = true;
        }
    }
    if !any {
        return Err(Error::data("cannot combine losses: no term present"));
    }
    Ok(LossBreakdown {
        terms,
        weights,
        total,
    })
}

/// Loss handles recorded on a tape.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossVars {
    pub kcg: Option<Var>,
    pub ap: Option<Var>,
    pub rp: Option<Var>,
    pub mlm: Option<Var>,
    pub mrm: Option<Var>,
}

impl LossVars {
    pub fn get(&self, o: Objective) -> Option<Var> {
        match o {
            Objective::Kcg => self.kcg,
            Objective::Ap => self.ap,
            Objective::Rp => self.rp,
            Objective::Mlm => self.mlm,
            Objective::Mrm => self.mrm,
        }
    }

    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossTerms {
        let mut t = LossTerms::default();
        for o in Objective::ALL {
            t.set(
                o,
                self.get(o).map(|v| tape.value(v).item().to_f64_lossy() as f32),
            );
        }
        t
    }

    /// Records the weighted total on the tape, in the same order and
    /// arithmetic as [`combine_losses`].
    pub fn combine<T: Scalar>(&self, tape: &mut Tape<T>, weights: &LossWeights) -> Result<Var> {
        let terms: Vec<(Var, T)> = Objective::ALL
            .iter()
            .filter_map(|&o| self.get(o).map(|v| (v, T::lit(weights.get(o) as f64))))
            .collect();
        if terms.is_empty() {
            return Err(Error::data("cannot combine losses: no term present"));
        }
        Ok(tape.weighted_sum(&terms)?)
    }
}

/// Teacher-forced next-token cross-entropy over non-ignored target rows.
pub fn loss_kcg<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[Option<TokenId>]) -> Result<Var> {
    let t: Vec<Option<usize>> = targets.iter().map(|t| t.map(|x| x as usize)).collect();
    if t.iter().all(Option::is_none) {
        return Err(Error::data("empty target"));
    }
    Ok(tape.cross_entropy_opt(logits, &t)?)
}

/// Attribute cross-entropy over region rows; `None` when there are none.
pub fn loss_ap<T: Scalar>(
    net: &Network<'_>,
    tape: &mut Tape<T>,
    region_hidden: Option<Var>,
    labels: &[usize],
) -> Result<Option<Var>> {
    let Some(h) = region_hidden.filter(|_| !labels.is_empty()) else {
        return Ok(None);
    };
    let logits = net.ap_head(tape, h)?;
    Ok(Some(tape.cross_entropy(logits, labels, None)?))
}

/// Relation cross-entropy over `[subject ; object]` rows.
pub fn loss_rp<T: Scalar>(
    net: &Network<'_>,
    tape: &mut Tape<T>,
    subject: Option<Var>,
    object: Option<Var>,
    labels: &[usize],
) -> Result<Option<Var>> {
    let (Some(s), Some(o)) = (subject, object) else {
        return Ok(None);
    };
    if labels.is_empty() {
        return Ok(None);
    }
    let pairs = tape.concat_cols(&[s, o])?;
    let logits = net.rp_head(tape, pairs)?;
    Ok(Some(tape.cross_entropy(logits, labels, None)?))
}

/// Cross-entropy at masked text positions only.
pub fn loss_mlm<T: Scalar>(
    net: &Network<'_>,
    tape: &mut Tape<T>,
    masked_hidden: Option<Var>,
    originals: &[TokenId],
) -> Result<Option<Var>> {
    let Some(h) = masked_hidden.filter(|_| !originals.is_empty()) else {
        return Ok(None);
    };
    let logits = net.lm_head(tape, h)?;
    let t: Vec<usize> = originals.iter().map(|&x| x as usize).collect();
    Ok(Some(tape.cross_entropy(logits, &t, None)?))
}

/// Mean `KL(p ‖ q)` over masked regions, `q = softmax(mrm_head(h))`.
pub fn loss_mrm<T: Scalar>(
    net: &Network<'_>,
    tape: &mut Tape<T>,
    region_hidden: Option<Var>,
    detector: &Tensor<T>,
) -> Result<Option<Var>> {
    let Some(h) = region_hidden.filter(|_| !detector.is_empty()) else {
        return Ok(None);
    };
    let logits = net.mrm_head(tape, h)?;
    let log_q = tape.log_softmax(logits)?;
    Ok(Some(tape.kl_divergence(detector, log_q)?))
}

/// One example of a batch: its record and assembled (possibly padded) input.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub example: MultimodalExample,
    pub input: AssembledInput,
}

fn concat_opt<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Option<Var>> {
    if parts.is_empty() {
        Ok(None)
    } else if parts.len() == 1 {
        Ok(Some(parts[0]))
    } else {
        Ok(Some(tape.concat_rows(parts)?))
    }
}

/// Runs the model over every item and records each requested objective's
/// loss, pooling units across the batch before averaging.
pub fn batch_losses<T: Scalar>(
    net: &Network<'_>,
    tape: &mut Tape<T>,
    items: &[BatchItem],
    objectives: &[Objective],
    rng: &mut SeededRng,
) -> Result<LossVars> {
    let want = |o: Objective| objectives.contains(&o);
    let mut kcg_logits = Vec::new();
    let mut kcg_targets = Vec::new();
    let mut mlm_rows = Vec::new();
    let mut mlm_orig = Vec::new();
    let mut mrm_rows = Vec::new();
    let mut mrm_p: Vec<T> = Vec::new();
    let mut ap_rows = Vec::new();
    let mut ap_labels = Vec::new();
    let (mut rp_s, mut rp_o, mut rp_labels) = (Vec::new(), Vec::new(), Vec::new());
    let n_classes = net.config().n_classes;

    for item in items {
        let hidden = net.forward(tape, &item.input, &item.example.rois, rng)?;
        if want(Objective::Kcg) && item.input.dec_targets.iter().any(Option::is_some) {
            kcg_logits.push(net.lm_head(tape, hidden)?);
            kcg_targets.extend_from_slice(&item.input.dec_targets);
        }
        if want(Objective::Mlm) && !item.input.mlm.is_empty() {
            let pos: Vec<usize> = item.input.mlm.iter().map(|m| m.0).collect();
            mlm_rows.push(tape.gather_rows(hidden, &pos)?);
            mlm_orig.extend(item.input.mlm.iter().map(|m| m.1));
        }
        if want(Objective::Mrm) && !item.input.mrm_regions.is_empty() {
            let pos: Vec<usize> = item
                .input
                .mrm_regions
                .iter()
                .map(|&r| item.input.region_position(r))
                .collect();
            mrm_rows.push(tape.gather_rows(hidden, &pos)?);
            for &r in &item.input.mrm_regions {
                let probs = &item.example.rois[r].class_probs;
                if probs.len() != n_classes {
                    return Err(Error::data(format!(
                        "RoI {r} has {} classes, model expects {n_classes}",
                        probs.len()
                    )));
                }
                mrm_p.extend(probs.iter().map(|&p| T::lit(p as f64)));
            }
        }
        if want(Objective::Ap) && !item.example.attributes.is_empty() {
            let pos: Vec<usize> = item
                .example
                .attributes
                .iter()
                .map(|&(r, _)| item.input.region_position(r))
                .collect();
            ap_rows.push(tape.gather_rows(hidden, &pos)?);
            ap_labels.extend(item.example.attributes.iter().map(|a| a.1));
        }
        if want(Objective::Rp) && !item.example.relations.is_empty() {
            let n = item.example.rois.len();
            if let Some(&(s, o, _)) = item.example.relations.iter().find(|r| r.0 >= n || r.1 >= n) {
                return Err(Error::data(format!(
                    "relation pair ({s}, {o}) out of range for {n} RoIs"
                )));
            }
            let sp: Vec<usize> = item.example.relations.iter().map(|r| item.input.region_position(r.0)).collect();
            let op: Vec<usize> = item.example.relations.iter().map(|r| item.input.region_position(r.1)).collect();
            rp_s.push(tape.gather_rows(hidden, &sp)?);
            rp_o.push(tape.gather_rows(hidden, &op)?);
            rp_labels.extend(item.example.relations.iter().map(|r| r.2));
        }
    }

    let mut out = LossVars::default();
    if let Some(logits) = concat_opt(tape, &kcg_logits)? {
        out.kcg = Some(loss_kcg(tape, logits, &kcg_targets)?);
    }
    let h = concat_opt(tape, &mlm_rows)?;
    out.mlm = loss_mlm(net, tape, h, &mlm_orig)?;
    let h = concat_opt(tape, &mrm_rows)?;
    let p = Tensor::new(vec![mrm_p.len() / n_classes, n_classes], mrm_p)?;
    out.mrm = loss_mrm(net, tape, h, &p)?;
    let h = concat_opt(tape, &ap_rows)?;
    out.ap = loss_ap(net, tape, h, &ap_labels)?;
    let s = concat_opt(tape, &rp_s)?;
    let o = concat_opt(tape, &rp_o)?;
    out.rp = loss_rp(net, tape, s, o, &rp_labels)?;
    Ok(out)
}
