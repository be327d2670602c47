//! Caption metrics on a handful of generations.

use std::collections::HashSet;

use viscom::metrics::{evaluate_corpus, EvalCorpus, EvalExample, UniqueMode};

fn main() -> viscom::Result<()> {
    let ex = |g: &str, r: &[&str]| EvalExample {
        generated: vec![g.to_string()],
        references: r.iter().map(|s| s.to_string()).collect(),
    };
    let corpus = EvalCorpus::new(vec![
        ex("buy a ticket", &["buy a ticket", "get a ticket at the desk"]),
        ex("feel happy", &["feel very happy", "smile"]),
        ex("walk to the park", &["walk to the park with the dog"]),
        ex("feel happy", &["be relieved"]),
    ])
    .with_training(["feel happy"]);
    let r = evaluate_corpus(&corpus, UniqueMode::ExactlyOnce)?;
    println!("BLEU-2 {:.2}  CIDEr {:.3}  Unique {:.1}  Novel {:.1}", r.bleu2, r.cider, r.unique, r.novel);
    let distinct = evaluate_corpus(&corpus, UniqueMode::Distinct)?;
    println!("Unique (distinct sentences) {:.1}", distinct.unique);
    let seen: HashSet<String> = corpus.training.clone();
    println!("training sentences: {seen:?}");
    Ok(())
}
