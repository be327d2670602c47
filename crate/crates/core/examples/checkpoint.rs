//! Saves a checkpoint, reloads it, and shows the round trip is byte-exact.

use viscom::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use viscom::config::{Preset, RunConfig, Stage};
use viscom::model::ModelParams;
use viscom::vocab::Vocabulary;

fn main() -> viscom::Result<()> {
    let vocab = Vocabulary::build(["a red ball"], 1)?;
    let mut config = RunConfig::preset(Preset::Desk, Stage::Finetune);
    config.model.vocab_size = vocab.len();
    let params = ModelParams::init(&config.model, config.init, 3)?;
    let ck = Checkpoint {
        config,
        params,
        optimizer: None,
        global_step: 0,
        vocab: Some(vocab),
    };
    let dir = std::env::temp_dir().join(format!("viscom-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| viscom::Error::io(&dir, e))?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &ck)?;
    let bytes = std::fs::read(&path).map_err(|e| viscom::Error::io(&path, e))?;
    let back = load_checkpoint(&path)?;
    println!("{} bytes, {} tensors, {} parameters", bytes.len(), back.params.iter().count(), back.params.count());
    println!("re-encoded identically: {}", back.to_bytes() == bytes);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
