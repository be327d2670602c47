//! Greedy and nucleus decoding from a briefly finetuned model.

use viscom::config::{Preset, RunConfig, Stage};
use viscom::data::{generate_corpus, SynthConfig};
use viscom::generate::{generate, GenerationConfig};
use viscom::model::ModelParams;
use viscom::train::train;
use viscom::vocab::Vocabulary;

fn main() -> viscom::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk, Stage::Finetune);
    cfg.optimizer.lr = 1e-3;
    cfg.schedule.epochs = 20;
    let corpus = generate_corpus(&SynthConfig::for_model(&cfg.model, 8, 2));
    let texts: Vec<&str> = corpus
        .iter()
        .flat_map(|e| e.event_text.as_deref().into_iter().chain([e.target_text.as_str()]))
        .collect();
    let vocab = Vocabulary::build(texts, 1)?;
    cfg.model.vocab_size = vocab.len();
    let mut params = train(&cfg, &vocab, ModelParams::init(&cfg.model, cfg.init, 2)?, None, &corpus, &[], None)?.params;
    params.set_dropout(0.0);

    for e in corpus.iter().filter(|e| e.task.is_generation()).take(3) {
        println!("{} | {} (reference: {})", e.task.as_str(), e.event_text.as_deref().unwrap_or(""), e.target_text);
        let greedy = &generate(&params, &vocab, e, &GenerationConfig::default())?[0];
        println!("  greedy : {}", vocab.decode(greedy)?);
        for s in generate(&params, &vocab, e, &GenerationConfig::nucleus(0.9, 3, 7))? {
            println!("  nucleus: {}", vocab.decode(&s)?);
        }
    }
    Ok(())
}
