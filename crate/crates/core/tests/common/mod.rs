//! Fixtures and oracles shared by the integration tests and the acceptance
//! runner.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use viscom::data::MultimodalExample;
use viscom::model::{assemble_input, ModelConfig, ModelParams, Network, RoIFeature};
use viscom::rng::seeded;
use viscom::tasks::{batch_losses, BatchItem, LossVars, LossWeights, Objective};
use viscom::tensor::{Tape, Tensor};
use viscom::vocab::{TaskType, Vocabulary};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn roi(feat: Vec<f32>, probs: Vec<f32>) -> RoIFeature {
    RoIFeature {
        feat,
        class_probs: probs,
    }
}

pub fn example(task: TaskType, event: Option<&str>, target: &str, rois: Vec<RoIFeature>) -> MultimodalExample {
    MultimodalExample {
        task,
        event_text: event.map(str::to_string),
        target_text: target.to_string(),
        rois,
        attributes: vec![],
        relations: vec![],
        source_id: "img0".into(),
        relation: None,
    }
}

/// d_model=16, one encoder and one decoder layer.
pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_ffn: 32,
        vocab_size,
        d_visual: 4,
        n_classes: 5,
        n_attr: 3,
        n_rel: 3,
        max_positions: 16,
        dropout_rate: 0.0,
    }
}

/// Parameters with every entry random (biases and gains too), so that no
/// gradient path is trivially zero.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = seeded(seed, 99);
    let n = Normal::new(0.0f32, 0.3).unwrap();
    let mut p = ModelParams::zeros(cfg).unwrap();
    for (name, t) in p.iter_mut() {
        let base = if name.ends_with(".gain") { 1.0 } else { 0.0 };
        for x in t.data_mut() {
            *x = base + n.sample(&mut rng);
        }
    }
    p
}

pub fn random_roi(rng: &mut impl Rng, d: usize, c: usize) -> RoIFeature {
    let feat = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let raw: Vec<f32> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f32 = raw.iter().sum();
    roi(feat, raw.iter().map(|x| x / s).collect())
}

/// Two examples over a tiny model: an inference example for KCG and a
/// caption with six words, two annotated RoIs and one relation for the
/// masked and region objectives. Masking is seeded so that at least one
/// token and one region are masked.
pub struct GradCase {
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub kcg: BatchItem,
    pub rest: BatchItem,
}

impl GradCase {
    pub fn new(seed: u64) -> Self {
        let vocab = Vocabulary::build(["a dog sits near the red ball", "he wants to play"], 1).unwrap();
        let cfg = tiny_config(vocab.len());
        let mut rng = seeded(seed, 98);
        let rois: Vec<RoIFeature> = (0..2).map(|_| random_roi(&mut rng, cfg.d_visual, cfg.n_classes)).collect();
        let gen = example(TaskType::Intent, Some("a dog sits"), "to play", rois.clone());
        let mut cap = example(TaskType::Caption, None, "a dog sits near red ball", rois);
        cap.attributes = vec![(0, 1), (1, 2)];
        cap.relations = vec![(0, 1, 2)];
        let kcg_in = assemble_input(&gen, &vocab, &[Objective::Kcg], true, cfg.max_positions, &mut rng).unwrap();
        let rest_objs = [Objective::Ap, Objective::Rp, Objective::Mlm, Objective::Mrm];
        let rest_in = (0u64..)
            .map(|s| {
                let mut r = seeded(seed.wrapping_add(s), 97);
                assemble_input(&cap, &vocab, &rest_objs, true, cfg.max_positions, &mut r).unwrap()
            })
            .find(|a| !a.mlm.is_empty() && !a.mrm_regions.is_empty())
            .unwrap();
        Self {
            params: random_params(&cfg, seed),
            vocab,
            kcg: BatchItem {
                example: gen,
                input: kcg_in,
            },
            rest: BatchItem {
                example: cap,
                input: rest_in,
            },
        }
    }

    pub fn values_f64(&self) -> BTreeMap<String, Tensor<f64>> {
        self.params.iter().map(|(n, t)| (n.clone(), t.cast::<f64>())).collect()
    }

    /// Records all five losses and the weighted total on a fresh tape.
    pub fn record(&self, values: &BTreeMap<String, Tensor<f64>>) -> (Tape<f64>, Network<'_>, LossVars, viscom::tensor::Var) {
        let mut tape = Tape::<f64>::new();
        let net = Network::bind_values(&self.params, &mut tape, values).unwrap();
        let mut rng = seeded(0, 0);
        let mut lv = batch_losses(&net, &mut tape, std::slice::from_ref(&self.rest), &Objective::ALL, &mut rng).unwrap();
        let k = batch_losses(&net, &mut tape, std::slice::from_ref(&self.kcg), &[Objective::Kcg], &mut rng).unwrap();
        lv.kcg = k.kcg;
        let total = lv.combine(&mut tape, &LossWeights::default()).unwrap();
        (tape, net, lv, total)
    }

    /// `[kcg, ap, rp, mlm, mrm, total]` at the given values.
    pub fn losses(&self, values: &BTreeMap<String, Tensor<f64>>) -> [f64; 6] {
        let (tape, _, lv, total) = self.record(values);
        let mut out = [0.0; 6];
        for (i, o) in Objective::ALL.iter().enumerate() {
            out[i] = tape.value(lv.get(*o).expect("every loss present")).item();
        }
        out[5] = tape.value(total).item();
        out
    }
}

pub const LOSS_NAMES: [&str; 6] = ["kcg", "ap", "rp", "mlm", "mrm", "total"];

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub failures: Vec<String>,
    /// Largest `|a − n| / max(|a|, |n|)` over entries above the floor.
    pub worst_rel: f64,
}

/// An entry passes when `|a − n| ≤ rel · max(|a|, |n|)` or both are below
/// `floor` in absolute difference (where relative error is meaningless).
pub fn grad_check(case: &GradCase, h: f64, rel: f64, floor: f64) -> GradReport {
    let base = case.values_f64();
    let (mut tape, net, lv, total) = case.record(&base);
    let mut analytic: Vec<BTreeMap<String, Vec<f64>>> = Vec::new();
    let loss_vars: Vec<_> = Objective::ALL
        .iter()
        .map(|&o| lv.get(o).unwrap())
        .chain(std::iter::once(total))
        .collect();
    for &v in &loss_vars {
        tape.zero_grad();
        tape.backward(v).unwrap();
        analytic.push(net.bound().grads(&tape));
    }

    let mut report = GradReport {
        checked: 0,
        failures: vec![],
        worst_rel: 0.0,
    };
    let mut values = base.clone();
    for (name, t) in &base {
        for i in 0..t.len() {
            let x = t.data()[i];
            values.get_mut(name).unwrap().data_mut()[i] = x + h;
            let up = case.losses(&values);
            values.get_mut(name).unwrap().data_mut()[i] = x - h;
            let down = case.losses(&values);
            values.get_mut(name).unwrap().data_mut()[i] = x;
            for k in 0..6 {
                let n = (up[k] - down[k]) / (2.0 * h);
                let a = analytic[k][name][i];
                let diff = (a - n).abs();
                let scale = a.abs().max(n.abs());
                report.checked += 1;
                if diff > floor {
                    report.worst_rel = report.worst_rel.max(diff / scale);
                }
                if diff > floor && diff > rel * scale {
                    report
                        .failures
                        .push(format!("{}: {name}[{i}] analytic {a:e} vs numeric {n:e}", LOSS_NAMES[k]));
                }
            }
        }
    }
    report
}

/// Whole-corpus vocabulary for synthetic examples.
pub fn corpus_vocab(examples: &[MultimodalExample]) -> Vocabulary {
    let texts: Vec<String> = examples
        .iter()
        .flat_map(|e| [e.target_text.clone(), e.event_text.clone().unwrap_or_default()])
        .collect();
    Vocabulary::build(texts.iter().map(String::as_str), 1).unwrap()
}

/// Loss values (f64) of a zero-initialized model on a small synthetic
/// batch whose detector distributions are uniform, with the label-space
/// sizes `(V, n_attr, n_rel)`.
pub fn uniform_model_losses() -> (BTreeMap<Objective, f64>, [usize; 3]) {
    use viscom::data::{generate_corpus, SynthConfig};
    let base = ModelConfig::desk();
    let mut corpus = generate_corpus(&SynthConfig::for_model(&base, 16, 0));
    for e in &mut corpus {
        for r in &mut e.rois {
            let c = r.class_probs.len();
            r.class_probs = vec![1.0 / c as f32; c];
        }
    }
    let vocab = corpus_vocab(&corpus);
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..base
    };
    let params = ModelParams::zeros(&cfg).unwrap();
    let mut tape = Tape::<f64>::new();
    let net = Network::bind(&params, &mut tape);
    let mut rng = seeded(0, 3);
    let mut out = BTreeMap::new();
    for group in [
        vec![Objective::Kcg],
        vec![Objective::Mlm, Objective::Mrm],
        vec![Objective::Ap, Objective::Rp],
    ] {
        let mut items = Vec::new();
        for e in corpus.iter().filter(|e| group.iter().any(|o| o.accepts(e))) {
            let input = assemble_input(e, &vocab, &group, true, cfg.max_positions, &mut rng).unwrap();
            items.push(BatchItem {
                example: e.clone(),
                input,
            });
        }
        let lv = batch_losses(&net, &mut tape, &items, &group, &mut rng).unwrap();
        for o in &group {
            if let Some(v) = lv.get(*o) {
                out.insert(*o, tape.value(v).item());
            }
        }
    }
    (out, [vocab.len(), cfg.n_attr, cfg.n_rel])
}

/// Empirical masking statistics.
#[derive(Debug, Clone, Default)]
pub struct MaskStats {
    pub mlm_units: usize,
    pub mlm_masked: usize,
    pub mask: usize,
    pub random: usize,
    pub keep: usize,
    pub mrm_units: usize,
    pub mrm_masked: usize,
    /// Masked positions holding a reserved token (including `<unk>`).
    pub special_masked: usize,
    /// Random replacements that drew a reserved id.
    pub special_drawn: usize,
}

/// Runs the real assembly path over synthetic captions (each with one
/// out-of-vocabulary word) until `min_units` eligible tokens and regions
/// have been seen.
pub fn masking_stats(min_units: usize, seed: u64) -> MaskStats {
    use viscom::data::{generate_corpus, SynthConfig};
    use viscom::vocab::{is_reserved, MASK};
    let base = ModelConfig::desk();
    let captions: Vec<_> = generate_corpus(&SynthConfig::for_model(&base, 64, seed))
        .into_iter()
        .filter(|e| e.task == TaskType::Caption)
        .collect();
    let vocab = corpus_vocab(&captions);
    let corpus: Vec<_> = captions
        .into_iter()
        .map(|mut e| {
            e.target_text.push_str(" zzunseen");
            e
        })
        .collect();
    let mut rng = seeded(seed, viscom::rng::streams::MASKING);
    let mut s = MaskStats::default();
    loop {
        for e in &corpus {
            let a = assemble_input(e, &vocab, &[Objective::Mlm, Objective::Mrm], true, 128, &mut rng).unwrap();
            s.mlm_units += vocab.encode(&e.target_text).iter().filter(|&&t| !is_reserved(t)).count();
            for &(pos, orig) in &a.mlm {
                s.mlm_masked += 1;
                s.special_masked += usize::from(is_reserved(orig));
                let now = a.enc_ids[pos];
                if now == MASK {
                    s.mask += 1;
                } else if now == orig {
                    s.keep += 1;
                } else {
                    s.random += 1;
                    s.special_drawn += usize::from(is_reserved(now));
                }
            }
            s.mrm_units += e.rois.len();
            s.mrm_masked += a.mrm_regions.len();
            if s.mlm_units >= min_units && s.mrm_units >= min_units {
                return s;
            }
        }
    }
}

/// Six regular words, so a vocabulary built from them has V = 24.
pub const FILTER_WORDS: [&str; 6] = ["to", "buy", "food", "feel", "happy", "eat"];

/// Relation-tagged candidates over [`FILTER_WORDS`] (two per relation),
/// their vocabulary, and a zero-initialized scorer sized for it.
pub fn filter_fixture() -> (ModelParams, Vocabulary, Vec<MultimodalExample>) {
    use std::fmt::Write;
    use viscom::data::{parse_candidates, COMET_RELATIONS};
    let targets = ["to buy food", "feel happy", "to eat food", "buy happy food", "eat", "to feel"];
    let mut text = String::new();
    let mut rng = seeded(24, 0);
    for (i, (rel, _)) in COMET_RELATIONS.iter().enumerate() {
        for k in 0..2 {
            let r = random_roi(&mut rng, 4, 5);
            let target = targets[(2 * i + k) % targets.len()];
            let line = serde_json::json!({
                "relation": rel,
                "task": "caption",
                "event": "eat food",
                "target": target,
                "rois": [r],
                "source_id": format!("c{i}_{k}"),
            });
            writeln!(text, "{line}").unwrap();
        }
    }
    let candidates = parse_candidates(&text, std::path::Path::new("candidates.jsonl")).unwrap();
    let vocab = Vocabulary::build(FILTER_WORDS, 1).unwrap();
    let params = ModelParams::zeros(&tiny_config(vocab.len())).unwrap();
    (params, vocab, candidates)
}

/// Logged totals that differ (bitwise) from `Σ weight·term` accumulated in
/// f32 in objective order, over one short all-objective pretraining run.
pub fn loss_combination_mismatches(interleave: viscom::config::Interleave) -> (usize, Vec<String>) {
    use viscom::config::{Preset, RunConfig, Stage};
    use viscom::data::{generate_corpus, SynthConfig};
    use viscom::train::train;
    let mut cfg = RunConfig::preset(Preset::Desk, Stage::Pretrain);
    cfg.interleave = interleave;
    cfg.schedule.epochs = 2;
    cfg.schedule.batch_size = 8;
    let corpus = generate_corpus(&SynthConfig::for_model(&cfg.model, 8, 5));
    let vocab = corpus_vocab(&corpus);
    cfg.model.vocab_size = vocab.len();
    let params = ModelParams::init(&cfg.model, cfg.init, 5).unwrap();
    let out = train(&cfg, &vocab, params, None, &corpus, &[], None).unwrap();
    let mut bad = Vec::new();
    let mut n = 0;
    for s in out.steps() {
        n += 1;
        let mut want = 0.0f32;
        for o in Objective::ALL {
            if let Some(v) = s.losses.terms.get(o) {
                want += s.losses.weights.get(o) * v;
            }
        }
        if want.to_bits() != s.losses.total.to_bits() {
            bad.push(format!("step {}: logged {} vs {}", s.step, s.losses.total, want));
        }
    }
    (n, bad)
}

/// Writes the reproducibility corpus (16 images, 64 records, split 12/4) to
/// `dir` and returns `(train, valid)` paths.
pub fn write_repro_corpus(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    use viscom::data::{generate_corpus, split_by_source, write_jsonl, SynthConfig};
    let corpus = generate_corpus(&SynthConfig::for_model(&ModelConfig::desk(), 16, 3));
    let (train, valid) = split_by_source(&corpus, 4);
    let (t, v) = (dir.join("train.jsonl"), dir.join("valid.jsonl"));
    write_jsonl(&t, &train).unwrap();
    write_jsonl(&v, &valid).unwrap();
    (t, v)
}

/// Loss curves of a seeded two-epoch `pretrain` followed by a two-epoch
/// `finetune` from its final checkpoint, run through the command layer.
/// Checkpoint paths are dropped so the records do not depend on `dir`.
pub struct ReproRun {
    pub pretrain: Vec<viscom::train::LogRecord>,
    pub finetune: Vec<viscom::train::LogRecord>,
    pub pretrain_dir: PathBuf,
    pub finetune_dir: PathBuf,
}

pub fn repro_run(dir: &std::path::Path) -> ReproRun {
    use viscom::commands::{cmd_finetune, cmd_pretrain};
    use viscom::config::{Preset, RunConfig, Stage};
    use viscom::train::LogRecord;
    let (train, valid) = write_repro_corpus(dir);
    let strip = |log: Vec<LogRecord>| -> Vec<LogRecord> {
        log.into_iter()
            .map(|r| match r {
                LogRecord::Epoch(mut e) => {
                    e.checkpoint = None;
                    LogRecord::Epoch(e)
                }
                s => s,
            })
            .collect()
    };
    let pre_dir = dir.join("pretrain");
    let mut pre = RunConfig::preset(Preset::Desk, Stage::Pretrain);
    pre.schedule.epochs = 2;
    pre.schedule.seed = 7;
    pre.paths.train = Some(train.clone());
    pre.paths.valid = Some(valid.clone());
    pre.paths.out_dir = Some(pre_dir.clone());
    let p = cmd_pretrain(pre).unwrap();

    let ft_dir = dir.join("finetune");
    let mut ft = RunConfig::preset(Preset::Desk, Stage::Finetune);
    ft.schedule.epochs = 2;
    ft.schedule.seed = 7;
    ft.paths.train = Some(train);
    ft.paths.valid = Some(valid);
    ft.paths.out_dir = Some(ft_dir.clone());
    let f = cmd_finetune(ft, Some(&pre_dir.join("last.ckpt"))).unwrap();
    ReproRun {
        pretrain: strip(p.log),
        finetune: strip(f.log),
        pretrain_dir: pre_dir,
        finetune_dir: ft_dir,
    }
}

/// Compares `records` with a committed JSONL fixture, or rewrites the
/// fixture when `VISCOM_REGEN_FIXTURES` is set. Returns the first
/// difference, if any.
pub fn check_curve_fixture(name: &str, records: &[viscom::train::LogRecord]) -> Result<(), String> {
    let path = fixture(name);
    let text: String = records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    if std::env::var_os("VISCOM_REGEN_FIXTURES").is_some() {
        std::fs::write(&path, &text).unwrap();
        return Ok(());
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed: Vec<viscom::train::LogRecord> = want
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parsed.len() != records.len() {
        return Err(format!("{} records, fixture has {}", records.len(), parsed.len()));
    }
    for (i, (a, b)) in records.iter().zip(&parsed).enumerate() {
        if a != b {
            return Err(format!("record {i} differs:\n  got  {a:?}\n  want {b:?}"));
        }
    }
    if text != want {
        return Err("records equal but serialized text differs".into());
    }
    Ok(())
}

/// Checkpoint files that do not survive `from_bytes` → `to_bytes` unchanged.
pub fn checkpoint_round_trip_failures(dir: &std::path::Path) -> Vec<String> {
    use viscom::checkpoint::Checkpoint;
    let mut bad = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "no checkpoints in {}", dir.display());
    for p in paths {
        let bytes = std::fs::read(&p).unwrap();
        match Checkpoint::from_bytes(&bytes, None) {
            Ok(c) if c.to_bytes() == bytes => {}
            Ok(_) => bad.push(format!("{}: re-encoding differs", p.display())),
            Err(e) => bad.push(format!("{}: {e}", p.display())),
        }
    }
    bad
}

/// Final validation KCG loss of finetuning with and without a preceding
/// pretraining stage (which includes KCG), under the same seed and schedule.
pub fn pretraining_trend() -> (f32, f32) {
    use viscom::config::{Preset, RunConfig, Stage};
    use viscom::data::{generate_corpus, split_by_source, SynthConfig};
    use viscom::train::train;
    let desk = ModelConfig::desk();
    let pre_corpus = generate_corpus(&SynthConfig::for_model(&desk, 48, 100));
    let (ft_train, ft_valid) = split_by_source(&generate_corpus(&SynthConfig::for_model(&desk, 8, 200)), 4);
    let all: Vec<MultimodalExample> = pre_corpus.iter().chain(&ft_train).chain(&ft_valid).cloned().collect();
    let vocab = corpus_vocab(&all);

    let mut pre = RunConfig::preset(Preset::Desk, Stage::Pretrain);
    pre.model.vocab_size = vocab.len();
    pre.optimizer.lr = 1e-3;
    pre.schedule.epochs = 3;
    pre.schedule.seed = 11;
    let mut ft = RunConfig::preset(Preset::Desk, Stage::Finetune);
    ft.model.vocab_size = vocab.len();
    ft.optimizer.lr = 1e-3;
    ft.schedule.epochs = 4;
    ft.schedule.seed = 11;

    let init = ModelParams::init(&ft.model, ft.init, 11).unwrap();
    let pretrained = train(&pre, &vocab, init.clone(), None, &pre_corpus, &[], None).unwrap().params;
    let with = train(&ft, &vocab, pretrained, None, &ft_train, &ft_valid, None).unwrap();
    let without = train(&ft, &vocab, init, None, &ft_train, &ft_valid, None).unwrap();
    (with.final_valid_kcg().unwrap(), without.final_valid_kcg().unwrap())
}

/// The committed 20-example corpus and its scripted `(bleu2, cider)`.
pub fn metrics_fixture() -> (viscom::metrics::EvalCorpus, f64, f64) {
    use viscom::metrics::{EvalCorpus, EvalExample};
    #[derive(serde::Deserialize)]
    struct Expected {
        bleu2: f64,
        cider: f64,
    }
    #[derive(serde::Deserialize)]
    struct Fixture {
        examples: Vec<EvalExample>,
        expected: Expected,
    }
    let f: Fixture = serde_json::from_str(&std::fs::read_to_string(fixture("metrics20.json")).unwrap()).unwrap();
    (EvalCorpus::new(f.examples), f.expected.bleu2, f.expected.cider)
}

/// Every hypothesis equals its single reference.
pub fn identity_corpus() -> viscom::metrics::EvalCorpus {
    use viscom::metrics::{EvalCorpus, EvalExample};
    let sentences = [
        "a man holds the red cup",
        "the dog runs across the park",
        "she wants to feed the cat",
        "he will put down the old book",
        "a child looks closely at the kite",
    ];
    EvalCorpus::new(
        sentences
            .iter()
            .map(|s| EvalExample {
                generated: vec![s.to_string()],
                references: vec![s.to_string()],
            })
            .collect(),
    )
}

pub fn total_variation(counts: &[usize], want: &[(u32, f64)]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut tv = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let p = want.iter().find(|w| w.0 == i as u32).map_or(0.0, |w| w.1);
        tv += (c as f64 / n as f64 - p).abs();
    }
    tv / 2.0
}

/// 10k nucleus (p = 0.9) draws from `[0.5, 0.3, 0.15, 0.05]`: how often
/// token 3 came out, and the total variation from the renormalized top-3.
pub fn nucleus_fixture_draws(seed: u64) -> (usize, f64) {
    use viscom::generate::{nucleus_candidates, sample_candidate};
    let probs = [(0u32, 0.5), (1, 0.3), (2, 0.15), (3, 0.05)];
    let cands = nucleus_candidates(&probs, 0.9);
    let mut rng = seeded(seed, viscom::rng::streams::SAMPLING);
    let mut counts = [0usize; 4];
    for _ in 0..10_000 {
        counts[sample_candidate(&cands, &mut rng) as usize] += 1;
    }
    let tv = total_variation(&counts, &[(0, 0.5 / 0.95), (1, 0.3 / 0.95), (2, 0.15 / 0.95)]);
    (counts[3], tv)
}

/// Finetunes on eight synthetic inference examples for 300 steps at
/// lr 1e-3; returns `(mean KCG loss, exact greedy reproductions, 8)`.
pub fn overfit_oracle() -> (f32, usize, usize) {
    use viscom::config::{Preset, RunConfig, Stage};
    use viscom::data::{generate_corpus, SynthConfig};
    use viscom::generate::{generate, GenerationConfig};
    use viscom::train::{train, validation_kcg};
    let mut cfg = RunConfig::preset(Preset::Desk, Stage::Finetune);
    let corpus = generate_corpus(&SynthConfig::for_model(&cfg.model, 4, 11));
    let examples: Vec<_> = corpus.into_iter().filter(|e| e.task.is_generation()).take(8).collect();
    let vocab = corpus_vocab(&examples);
    cfg.model.vocab_size = vocab.len();
    cfg.optimizer.lr = 1e-3;
    cfg.schedule.epochs = 300;
    cfg.schedule.max_steps = Some(300);
    let params = ModelParams::init(&cfg.model, cfg.init, cfg.schedule.seed).unwrap();
    let out = train(&cfg, &vocab, params, None, &examples, &[], None).unwrap();
    let loss = validation_kcg(&out.params, &vocab, &examples, cfg.use_event).unwrap().unwrap();
    let exact = examples
        .iter()
        .filter(|e| {
            let ids = &generate(&out.params, &vocab, e, &GenerationConfig::default()).unwrap()[0];
            vocab.decode(ids).unwrap() == e.target_text
        })
        .count();
    (loss, exact, examples.len())
}
