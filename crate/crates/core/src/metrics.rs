//! Corpus BLEU-2, CIDEr-D, Unique and Novel.
//!
//! Sentences are compared as whitespace-separated tokens. When an example
//! has several generations, each is scored against that example's
//! references as its own segment.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generated sentences and references for one example.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalExample {
    pub generated: Vec<String>,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalCorpus {
    pub examples: Vec<EvalExample>,
    /// Normalized training sentences, for Novel.
    pub training: HashSet<String>,
}

impl EvalCorpus {
    pub fn new(examples: Vec<EvalExample>) -> Self {
        Self {
            examples,
            training: HashSet::new(),
        }
    }

    pub fn with_training<I: IntoIterator<Item = S>, S: AsRef<str>>(mut self, sentences: I) -> Self {
        self.training = sentences.into_iter().map(|s| normalize(s.as_ref())).collect();
        self
    }

    pub fn generated(&self) -> Vec<String> {
        self.examples.iter().flat_map(|e| e.generated.iter().cloned()).collect()
    }
}

/// Collapses runs of whitespace and trims.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

type Ngram<'a> = Vec<&'a str>;

fn ngram_counts<'a>(toks: &[&'a str], n: usize) -> HashMap<Ngram<'a>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with uniform weights over unigrams and bigrams, no
/// smoothing, brevity penalty from the closest reference lengths (shorter on
/// ties). Percent.
pub fn bleu2(corpus: &EvalCorpus) -> Result<f64> {
    let mut matched = [0usize; 2];
    let mut total = [0usize; 2];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    let mut segments = 0;
    for ex in &corpus.examples {
        if ex.references.is_empty() {
            return Err(Error::data("BLEU needs at least one reference per example"));
        }
        let refs: Vec<Vec<&str>> = ex.references.iter().map(|r| tokens(r)).collect();
        for hyp in &ex.generated {
            segments += 1;
            let h = tokens(hyp);
            hyp_len += h.len();
            ref_len += refs
                .iter()
                .map(Vec::len)
                .min_by_key(|&l| (l.abs_diff(h.len()), l))
                .expect("non-empty references");
            for n in 1..=2 {
                let hc = ngram_counts(&h, n);
                let mut max_ref: HashMap<&Ngram, usize> = HashMap::new();
                let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
                for rc in &ref_counts {
                    for (g, &c) in rc {
                        let e = max_ref.entry(g).or_insert(0);
                        *e = (*e).max(c);
                    }
                }
                for (g, &c) in &hc {
                    matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                }
                total[n - 1] += h.len().saturating_sub(n - 1);
            }
        }
    }
    if segments == 0 {
        return Err(Error::data("BLEU needs at least one generated sentence"));
    }
    if matched.contains(&0) || total.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..2)
        .map(|i| 0.5 * (matched[i] as f64 / total[i] as f64).ln())
        .sum();
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_p.exp())
}

const CIDER_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

struct TfIdf {
    vec: [HashMap<Vec<String>, f64>; CIDER_N],
    norm: [f64; CIDER_N],
    /// Bigram count, the length the reference implementation compares.
    length: f64,
}

fn all_ngrams(s: &str) -> BTreeMap<Vec<String>, usize> {
    let toks: Vec<String> = s.split_whitespace().map(str::to_string).collect();
    let mut m = BTreeMap::new();
    for n in 1..=CIDER_N {
        if toks.len() >= n {
            for w in toks.windows(n) {
                *m.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
    }
    m
}

/// CIDEr-D: TF-IDF n-gram vectors (n = 1..4) with document frequencies
/// counted per example over its references, clipped cosine similarity and a
/// Gaussian length penalty (σ = 6), averaged over n and references, ×10.
///
/// With a single example every log-IDF would be zero; weights are set to 1
/// instead so the score stays informative.
pub fn cider(corpus: &EvalCorpus) -> Result<f64> {
    if corpus.examples.is_empty() {
        return Err(Error::data("CIDEr needs at least one example"));
    }
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    let mut refs_ng = Vec::with_capacity(corpus.examples.len());
    for ex in &corpus.examples {
        if ex.references.is_empty() {
            return Err(Error::data("CIDEr needs at least one reference per example"));
        }
        let r: Vec<_> = ex.references.iter().map(|s| all_ngrams(s)).collect();
        let seen: HashSet<&Vec<String>> = r.iter().flat_map(|m| m.keys()).collect();
        for g in seen {
            *df.entry(g.clone()).or_insert(0.0) += 1.0;
        }
        refs_ng.push(r);
    }
    let log_n = (corpus.examples.len() as f64).ln();
    let single = corpus.examples.len() == 1;
    let to_vec = |counts: &BTreeMap<Vec<String>, usize>| -> TfIdf {
        let mut vec: [HashMap<Vec<String>, f64>; CIDER_N] = Default::default();
        let mut norm = [0.0; CIDER_N];
        let mut length = 0.0;
        for (g, &tf) in counts {
            let n = g.len() - 1;
            let idf = if single {
                1.0
            } else {
                log_n - df.get(g).copied().unwrap_or(0.0).max(1.0).ln()
            };
            let v = tf as f64 * idf;
            vec[n].insert(g.clone(), v);
            norm[n] += v * v;
            if n == 1 {
                length += tf as f64;
            }
        }
        norm.iter_mut().for_each(|x| *x = x.sqrt());
        TfIdf { vec, norm, length }
    };
    let sim = |h: &TfIdf, r: &TfIdf| -> [f64; CIDER_N] {
        let delta = h.length - r.length;
        let mut val = [0.0; CIDER_N];
        for n in 0..CIDER_N {
            for (g, &hv) in &h.vec[n] {
                if let Some(&rv) = r.vec[n].get(g) {
                    val[n] += hv.min(rv) * rv;
                }
            }
            if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
                val[n] /= h.norm[n] * r.norm[n];
            }
            val[n] *= (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        }
        val
    };

    let mut total = 0.0;
    let mut count = 0usize;
    for (ex, refs) in corpus.examples.iter().zip(&refs_ng) {
        let ref_vecs: Vec<TfIdf> = refs.iter().map(&to_vec).collect();
        for hyp in &ex.generated {
            let hv = to_vec(&all_ngrams(hyp));
            let mut score = [0.0; CIDER_N];
            for rv in &ref_vecs {
                let s = sim(&hv, rv);
                for n in 0..CIDER_N {
                    score[n] += s[n];
                }
            }
            let avg = score.iter().sum::<f64>() / CIDER_N as f64 / ref_vecs.len() as f64;
            total += avg * 10.0;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::data("CIDEr needs at least one generated sentence"));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniqueMode {
    /// Sentences that occur exactly once in the generation set.
    #[default]
    ExactlyOnce,
    /// Number of distinct sentences.
    Distinct,
}

pub fn unique_metric(generated: &[String]) -> Result<f64> {
    unique_metric_with(generated, UniqueMode::ExactlyOnce)
}

pub fn unique_metric_with(generated: &[String], mode: UniqueMode) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::data("Unique needs at least one sentence"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in generated {
        *counts.entry(normalize(s)).or_insert(0) += 1;
    }
    let hits = match mode {
        UniqueMode::ExactlyOnce => counts.values().filter(|&&c| c == 1).count(),
        UniqueMode::Distinct => counts.len(),
    };
    Ok(100.0 * hits as f64 / generated.len() as f64)
}

/// Share of generated sentences absent from `training` (already normalized).
pub fn novel_metric(generated: &[String], training: &HashSet<String>) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::data("Novel needs at least one sentence"));
    }
    let novel = generated.iter().filter(|s| !training.contains(&normalize(s))).count();
    Ok(100.0 * novel as f64 / generated.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu2: f64,
    pub cider: f64,
    pub unique: f64,
    pub novel: f64,
    pub n_examples: usize,
}

pub fn evaluate_corpus(corpus: &EvalCorpus, unique_mode: UniqueMode) -> Result<MetricsReport> {
    let generated = corpus.generated();
    Ok(MetricsReport {
        bleu2: bleu2(corpus)?,
        cider: cider(corpus)?,
        unique: unique_metric_with(&generated, unique_mode)?,
        novel: novel_metric(&generated, &corpus.training)?,
        n_examples: corpus.examples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(g: &str, r: &[&str]) -> EvalExample {
        EvalExample {
            generated: vec![g.into()],
            references: r.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bleu_identity_and_zero_bigrams() {
        let c = EvalCorpus::new(vec![ex("a b c", &["a b c"]), ex("d e", &["d e"])]);
        assert!((bleu2(&c).unwrap() - 100.0).abs() < 1e-9);
        let c = EvalCorpus::new(vec![ex("a b", &["a c"])]);
        assert_eq!(bleu2(&c).unwrap(), 0.0);
        assert!(bleu2(&EvalCorpus::default()).is_err());
    }

    #[test]
    fn bleu_brevity_penalty() {
        // p1 = p2 = 1, c = 2, r = 4 -> exp(1 - 2)
        let c = EvalCorpus::new(vec![ex("a b", &["a b c d"])]);
        assert!((bleu2(&c).unwrap() - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
        // closest reference length ties resolve to the shorter one
        let c = EvalCorpus::new(vec![ex("a b c", &["a b c d", "a b"])]);
        assert!((bleu2(&c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn cider_identity_and_disjoint() {
        let c = EvalCorpus::new(vec![
            ex("the dog runs over here", &["the dog runs over here"]),
            ex("a cat sleeps on mats", &["a cat sleeps on mats"]),
        ]);
        assert!((cider(&c).unwrap() - 10.0).abs() < 1e-9);
        let c = EvalCorpus::new(vec![
            ex("x y z w", &["the dog runs over here"]),
            ex("q r s t", &["a cat sleeps on mats"]),
        ]);
        assert_eq!(cider(&c).unwrap(), 0.0);
        let single = EvalCorpus::new(vec![ex("one two three four", &["one two three four"])]);
        assert!((cider(&single).unwrap() - 10.0).abs() < 1e-9);
        assert!(cider(&EvalCorpus::new(vec![ex("a", &[])])).is_err());
    }

    #[test]
    fn unique_and_novel() {
        assert!((unique_metric(&s(&["a", "a", "b"])).unwrap() - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(unique_metric(&s(&["a", "b", "c"])).unwrap(), 100.0);
        assert_eq!(unique_metric(&s(&["a", "a"])).unwrap(), 0.0);
        assert!((unique_metric_with(&s(&["a", "a", "b"]), UniqueMode::Distinct).unwrap() - 200.0 / 3.0).abs() < 1e-9);
        assert!(unique_metric(&[]).is_err());
        let train: HashSet<String> = ["a".to_string()].into();
        assert!((novel_metric(&s(&["a", "b", "c"]), &train).unwrap() - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(novel_metric(&s(&["a"]), &HashSet::new()).unwrap(), 100.0);
        assert_eq!(novel_metric(&s(&["a", " a "]), &train).unwrap(), 0.0);
    }
}
