use rand::seq::SliceRandom;

use crate::rng::{seeded, streams};
use crate::tasks::BatchItem;
use crate::vocab::TokenId;

/// Examples padded to a common encoder and decoder length.
#[derive(Debug, Clone)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Groups items into batches of `batch_size` (the last may be short),
/// optionally after a seeded shuffle, and right-pads each batch to its
/// longest sequence. Padding positions are marked invalid in the masks.
pub fn make_batches(
    mut items: Vec<BatchItem>,
    batch_size: usize,
    pad_id: TokenId,
    seed: u64,
    shuffle: bool,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be positive");
    if shuffle {
        items.shuffle(&mut seeded(seed, streams::SHUFFLE));
    }
    let mut batches = Vec::new();
    let mut iter = items.into_iter().peekable();
    while iter.peek().is_some() {
        let mut chunk: Vec<BatchItem> = iter.by_ref().take(batch_size).collect();
        let enc = chunk.iter().map(|b| b.input.enc_len()).max().unwrap_or(0);
        let dec = chunk.iter().map(|b| b.input.dec_len()).max().unwrap_or(0);
        for b in &mut chunk {
            b.input.pad_to(enc, dec, pad_id);
        }
        batches.push(Batch { items: chunk });
    }
    batches
}
