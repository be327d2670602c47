//! Greedy and nucleus decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultimodalExample;
use crate::error::{Error, Result};
use crate::model::{assemble_prompt, ModelParams, Network};
use crate::rng::{seeded, streams, SeededRng};
use crate::tensor::Tape;
use crate::vocab::{self, TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub mode: DecodeMode,
    pub top_p: f32,
    pub max_len: usize,
    pub num_samples: usize,
    pub seed: u64,
    pub use_event: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            top_p: 0.9,
            max_len: 32,
            num_samples: 1,
            seed: 0,
            use_event: true,
        }
    }
}

impl GenerationConfig {
    pub fn nucleus(top_p: f32, num_samples: usize, seed: u64) -> Self {
        Self {
            mode: DecodeMode::Nucleus,
            top_p,
            num_samples,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::usage(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_len == 0 {
            return Err(Error::usage("max_len must be positive"));
        }
        if self.num_samples == 0 {
            return Err(Error::usage("num_samples must be positive"));
        }
        Ok(())
    }

    /// Sequences produced per example: always one for greedy decoding.
    pub fn samples(&self) -> usize {
        match self.mode {
            DecodeMode::Greedy => 1,
            DecodeMode::Nucleus => self.num_samples,
        }
    }
}

/// Tokens the decoder may emit: every regular token plus `</s>`.
fn emittable(id: usize) -> bool {
    id as TokenId == vocab::EOS || !vocab::is_reserved(id as TokenId)
}

/// Index of the largest logit among emittable tokens, lowest id on ties.
pub fn greedy_pick(logits: &[f32]) -> TokenId {
    let mut best: Option<(usize, f32)> = None;
    for (i, &l) in logits.iter().enumerate() {
        if emittable(i) && best.is_none_or(|(_, b)| l > b) {
            best = Some((i, l));
        }
    }
    best.map_or(vocab::EOS, |(i, _)| i as TokenId)
}

/// The minimal prefix of `probs` (sorted by descending probability, ties by
/// lowest id) whose mass reaches `top_p`, renormalized to sum to one.
pub fn nucleus_candidates(probs: &[(TokenId, f64)], top_p: f64) -> Vec<(TokenId, f64)> {
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mass = 0.0;
    let mut keep = 0;
    for &(_, p) in &sorted {
        mass += p;
        keep += 1;
        if mass >= top_p {
            break;
        }
    }
    sorted.truncate(keep.max(1));
    let total: f64 = sorted.iter().map(|c| c.1).sum();
    sorted.into_iter().map(|(t, p)| (t, p / total)).collect()
}

/// Draws from a candidate list whose probabilities sum to one.
pub fn sample_candidate(cands: &[(TokenId, f64)], rng: &mut SeededRng) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(t, p) in cands {
        acc += p;
        if u < acc {
            return t;
        }
    }
    cands.last().expect("non-empty candidates").0
}

/// Softmax over emittable tokens only, in f64.
fn emittable_probs(logits: &[f32]) -> Vec<(TokenId, f64)> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| emittable(*i))
        .map(|(_, &l)| l as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<(TokenId, f64)> = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| emittable(*i))
        .map(|(i, &l)| (i as TokenId, (l as f64 - max).exp()))
        .collect();
    let z: f64 = exps.iter().map(|e| e.1).sum();
    exps.into_iter().map(|(t, e)| (t, e / z)).collect()
}

/// Decodes `config.samples()` sequences (without `<s>`/`</s>`) for one
/// example, drawing nucleus samples from `rng`.
pub fn generate_with_rng(
    params: &ModelParams,
    example: &MultimodalExample,
    vocab: &Vocabulary,
    config: &GenerationConfig,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<TokenId>>> {
    config.validate()?;
    if !example.task.is_generation() {
        return Err(Error::data(format!(
            "{}: task `{}` is not an inference task",
            example.source_id, example.task
        )));
    }
    let cfg = params.config();
    let input = assemble_prompt(example, vocab, config.use_event, cfg.max_positions)?;
    let max_len = config.max_len.min(cfg.max_positions.saturating_sub(1)).max(1);
    let mut tape = Tape::<f32>::new();
    let net = Network::bind(params, &mut tape);
    let mut no_dropout = seeded(0, streams::DROPOUT);
    let embedded = net.embed(&mut tape, &input, &example.rois)?;
    let encoded = net.encode(&mut tape, embedded, &input.enc_valid, &mut no_dropout)?;
    let checkpoint = tape.len();

    let mut out = Vec::with_capacity(config.samples());
    for _ in 0..config.samples() {
        let mut ids = vec![vocab::BOS];
        let mut generated = Vec::new();
        while generated.len() < max_len {
            tape.truncate(checkpoint);
            let valid = vec![true; ids.len()];
            let hidden = net.decode(&mut tape, &ids, &valid, encoded, &input.enc_valid, &mut no_dropout)?;
            let last = tape.slice_rows(hidden, ids.len() - 1, 1)?;
            let logits = net.lm_head(&mut tape, last)?;
            let logits = tape.value(logits).data().to_vec();
            let next = match config.mode {
                DecodeMode::Greedy => greedy_pick(&logits),
                DecodeMode::Nucleus => {
                    let cands = nucleus_candidates(&emittable_probs(&logits), config.top_p as f64);
                    sample_candidate(&cands, rng)
                }
            };
            if next == vocab::EOS {
                break;
            }
            generated.push(next);
            ids.push(next);
        }
        out.push(generated);
    }
    Ok(out)
}

/// [`generate_with_rng`] with a generator seeded from `config.seed`.
pub fn generate(
    params: &ModelParams,
    vocab: &Vocabulary,
    example: &MultimodalExample,
    config: &GenerationConfig,
) -> Result<Vec<Vec<TokenId>>> {
    let mut rng = seeded(config.seed, streams::SAMPLING);
    generate_with_rng(params, example, vocab, config, &mut rng)
}
