//! Overfits a finetuned model on eight synthetic inference examples and
//! checks that greedy decoding reproduces every target.

use std::time::Instant;

use viscom::config::{Preset, RunConfig, Stage};
use viscom::data::{generate_corpus, SynthConfig};
use viscom::generate::{generate, GenerationConfig};
use viscom::model::{InitScheme, ModelParams};
use viscom::train::{train, validation_kcg};
use viscom::vocab::Vocabulary;

fn main() -> viscom::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk, Stage::Finetune);
    let corpus = generate_corpus(&SynthConfig::for_model(&cfg.model, 4, 11));
    let examples: Vec<_> = corpus.into_iter().filter(|e| e.task.is_generation()).take(8).collect();
    let texts: Vec<String> = examples
        .iter()
        .flat_map(|e| [e.target_text.clone(), e.event_text.clone().unwrap_or_default()])
        .collect();
    let vocab = Vocabulary::build(texts.iter().map(String::as_str), 1)?;
    cfg.model.vocab_size = vocab.len();
    cfg.optimizer.lr = 1e-3;
    cfg.schedule.epochs = 300;
    cfg.schedule.max_steps = Some(300);

    let start = Instant::now();
    let params = ModelParams::init(&cfg.model, InitScheme::Normal, cfg.schedule.seed)?;
    let out = train(&cfg, &vocab, params, None, &examples, &[], None)?;
    let loss = validation_kcg(&out.params, &vocab, &examples, cfg.use_event)?.unwrap();
    println!("{} steps in {:.1?}; mean KCG loss {loss:.4}", out.global_step, start.elapsed());

    let mut exact = 0;
    for e in &examples {
        let ids = &generate(&out.params, &vocab, e, &GenerationConfig::default())?[0];
        let text = vocab.decode(ids)?;
        println!("{:<8} {:<32} -> {text}", e.task.as_str(), e.target_text);
        exact += usize::from(text == e.target_text);
    }
    println!("{exact}/{} targets reproduced", examples.len());
    Ok(())
}
