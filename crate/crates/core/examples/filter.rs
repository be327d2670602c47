//! Self-training filter: finetune a scorer, score relation-tagged
//! candidates (some of them shuffled noise), keep those below a threshold.

use viscom::config::{Preset, RunConfig, Stage};
use viscom::data::{filter_dataset, filter_report, generate_candidates, generate_corpus, score_all, SynthConfig};
use viscom::model::ModelParams;
use viscom::train::train;
use viscom::vocab::Vocabulary;

fn main() -> viscom::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk, Stage::Finetune);
    cfg.optimizer.lr = 1e-3;
    cfg.schedule.epochs = 15;
    let synth = SynthConfig::for_model(&cfg.model, 16, 1);
    let corpus = generate_corpus(&synth);
    let candidates = generate_candidates(&synth, 0.3);
    let texts: Vec<&str> = corpus
        .iter()
        .chain(&candidates)
        .flat_map(|e| e.event_text.as_deref().into_iter().chain([e.target_text.as_str()]))
        .collect();
    let vocab = Vocabulary::build(texts, 1)?;
    cfg.model.vocab_size = vocab.len();
    let params = ModelParams::init(&cfg.model, cfg.init, 1)?;
    let mut scorer = train(&cfg, &vocab, params, None, &corpus, &[], None)?.params;
    scorer.set_dropout(0.0);

    let scored = score_all(&scorer, &vocab, &candidates, true)?;
    for threshold in [2.0, 3.5, 5.0] {
        let (kept, dropped) = filter_dataset(scored.clone(), threshold);
        let r = filter_report(&kept, &dropped);
        println!("threshold {threshold}: kept {}/{} ({:.0}%)", r.n_after, r.n_before, 100.0 * r.keep_ratio);
    }
    let (kept, dropped) = filter_dataset(scored, 3.5);
    for s in kept.iter().take(3).chain(dropped.iter().take(3)) {
        println!("  {:6.3}  {:<8} {}", s.avg_ce, s.example.relation.as_deref().unwrap_or("-"), s.example.target_text);
    }
    Ok(())
}
