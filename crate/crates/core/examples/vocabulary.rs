//! Builds a vocabulary, encodes and decodes a sentence.

use viscom::vocab::{self, Vocabulary};

fn main() -> viscom::Result<()> {
    let corpus = ["A man rides the horse", "the horse eats hay", "a man feeds the horse"];
    let v = Vocabulary::build(corpus, 1)?;
    println!("{} tokens ({} reserved)", v.len(), vocab::N_RESERVED);
    for (i, t) in v.tokens().iter().enumerate().skip(vocab::N_RESERVED as usize) {
        println!("  {i:>3} {t}");
    }
    let ids = v.encode("The man rides a zebra");
    println!("encode: {ids:?}");
    println!("decode: {}", v.decode(&ids)?);
    Ok(())
}
