use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MultimodalExample, ScoredExample};
use crate::error::{Error, Result};
use crate::model::{assemble_input, ModelParams, Network};
use crate::rng::{seeded, streams};
use crate::tasks::Objective;
use crate::tensor::Tape;
use crate::vocab::Vocabulary;

pub const HISTOGRAM_BINS: usize = 50;
pub const HISTOGRAM_MAX: f32 = 10.0;

/// Average teacher-forced cross-entropy (nats per target token, `</s>`
/// included) of the example's target under `params`, without dropout.
pub fn score_description(
    params: &ModelParams,
    vocab: &Vocabulary,
    example: &MultimodalExample,
    use_event: bool,
) -> Result<ScoredExample> {
    if example.target_text.trim().is_empty() {
        return Err(Error::data(format!("{}: empty target", example.source_id)));
    }
    let cfg = params.config();
    // The generation layout draws nothing from the generator.
    let mut rng = seeded(0, streams::DROPOUT);
    let input = assemble_input(example, vocab, &[Objective::Kcg], use_event, cfg.max_positions, &mut rng)?;
    let mut tape = Tape::<f32>::new();
    let net = Network::bind(params, &mut tape);
    let hidden = net.forward(&mut tape, &input, &example.rois, &mut rng)?;
    let logits = net.lm_head(&mut tape, hidden)?;
    let loss = crate::tasks::loss_kcg(&mut tape, logits, &input.dec_targets)?;
    let avg_ce = tape.value(loss).item();
    Ok(ScoredExample {
        example: example.clone(),
        avg_ce,
    })
}

/// Scores every example in parallel; output order matches input order.
pub fn score_all(
    params: &ModelParams,
    vocab: &Vocabulary,
    examples: &[MultimodalExample],
    use_event: bool,
) -> Result<Vec<ScoredExample>> {
    examples
        .par_iter()
        .map(|e| score_description(params, vocab, e, use_event))
        .collect()
}

/// Keeps examples scoring strictly below `threshold`, preserving order.
pub fn filter_dataset(scored: Vec<ScoredExample>, threshold: f32) -> (Vec<ScoredExample>, Vec<ScoredExample>) {
    scored.into_iter().partition(|s| s.avg_ce < threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub n_before: usize,
    pub n_after: usize,
    pub n_dropped: usize,
    pub keep_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f32>,
    pub bin_width: f32,
    /// 50 bins over `[0, 10)`; empty when there were no examples.
    pub histogram: Vec<usize>,
    /// Scores at or above 10.
    pub overflow: usize,
}

pub fn filter_report(kept: &[ScoredExample], dropped: &[ScoredExample]) -> FilterReport {
    let n = kept.len() + dropped.len();
    let width = HISTOGRAM_MAX / HISTOGRAM_BINS as f32;
    let mut histogram = if n == 0 { Vec::new() } else { vec![0; HISTOGRAM_BINS] };
    let mut overflow = 0;
    for s in kept.iter().chain(dropped) {
        let bin = (s.avg_ce.max(0.0) / width).floor();
        if bin.is_finite() && (bin as usize) < HISTOGRAM_BINS {
            histogram[bin as usize] += 1;
        } else {
            overflow += 1;
        }
    }
    FilterReport {
        n_before: n,
        n_after: kept.len(),
        n_dropped: dropped.len(),
        keep_ratio: if n == 0 { 0.0 } else { kept.len() as f64 / n as f64 },
        threshold: None,
        bin_width: width,
        histogram,
        overflow,
    }
}
