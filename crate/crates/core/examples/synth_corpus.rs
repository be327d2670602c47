//! Prints a few records of the templated synthetic corpus and candidate set.

use viscom::data::{generate_candidates, generate_corpus, to_jsonl, SynthConfig};

fn main() {
    let cfg = SynthConfig {
        n_images: 2,
        d_visual: 4,
        n_classes: 4,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg);
    for e in &corpus {
        println!("{:<8} event={:?} target={:?} rois={}", e.task.as_str(), e.event_text, e.target_text, e.rois.len());
    }
    let cands = generate_candidates(&cfg, 0.4);
    print!("{}", to_jsonl(&cands[..2]));
}
