//! Dataset formats, relation mapping, batching and the self-training filter.

mod batch;
mod comet;
mod example;
mod filter;
mod jsonl;
pub mod synth;

pub use synth::{generate_candidates, generate_corpus, split_by_source, SynthConfig};

pub use batch::{make_batches, Batch};
pub use comet::{load_candidates, map_comet_relation, parse_candidates, COMET_RELATIONS};
pub use example::{MultimodalExample, ScoredExample};
pub use filter::{
    filter_dataset, filter_report, score_all, score_description, FilterReport, HISTOGRAM_BINS,
    HISTOGRAM_MAX,
};
pub use jsonl::{load_jsonl, parse_jsonl, read_lines, to_jsonl, write_jsonl};
