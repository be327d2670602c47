//! Two epochs of five-objective pretraining on the synthetic corpus,
//! printing every step's losses.

use viscom::config::{Preset, RunConfig, Stage};
use viscom::data::{generate_corpus, split_by_source, SynthConfig};
use viscom::model::ModelParams;
use viscom::train::{train, LogRecord};
use viscom::vocab::Vocabulary;

fn main() -> viscom::Result<()> {
    let mut cfg = RunConfig::preset(Preset::Desk, Stage::Pretrain);
    cfg.schedule.epochs = 2;
    cfg.optimizer.lr = 1e-3;
    let (train_set, valid_set) = split_by_source(&generate_corpus(&SynthConfig::for_model(&cfg.model, 16, 0)), 4);
    let texts: Vec<&str> = train_set
        .iter()
        .chain(&valid_set)
        .flat_map(|e| e.event_text.as_deref().into_iter().chain([e.target_text.as_str()]))
        .collect();
    let vocab = Vocabulary::build(texts, 1)?;
    cfg.model.vocab_size = vocab.len();
    let params = ModelParams::init(&cfg.model, cfg.init, 0)?;
    let out = train(&cfg, &vocab, params, None, &train_set, &valid_set, None)?;
    for r in &out.log {
        match r {
            LogRecord::Step(s) => {
                let t = &s.losses.terms;
                println!(
                    "step {:>3} {:<10} total {:.4}  kcg {:?} ap {:?} rp {:?} mlm {:?} mrm {:?}",
                    s.step,
                    s.objectives.iter().map(|o| o.to_string()).collect::<Vec<_>>().join("+"),
                    s.losses.total,
                    t.kcg,
                    t.ap,
                    t.rp,
                    t.mlm,
                    t.mrm
                );
            }
            LogRecord::Epoch(e) => println!("epoch {} done, validation KCG {:?}", e.epoch, e.valid_kcg),
        }
    }
    Ok(())
}
