//! The command-line operations, callable as library functions.
//!
//! Every command that writes files also writes a manifest (configuration
//! hash, input digests, seed) next to its outputs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{RunConfig, Stage};
use crate::data::{
    filter_dataset, filter_report, load_candidates, load_jsonl, read_lines, score_all, write_jsonl, FilterReport,
    MultimodalExample,
};
use crate::error::{Error, Result};
use crate::generate::{generate_with_rng, GenerationConfig};
use crate::metrics::{evaluate_corpus, normalize, EvalCorpus, EvalExample, MetricsReport, UniqueMode};
use crate::model::ModelParams;
use crate::rng::{per_item, streams};
use crate::tasks::Objective;
use crate::train::{train, TrainOutcome};
use crate::vocab::{TaskType, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// What is needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Value::is_null", default)]
    pub settings: Value,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            settings: Value::Null,
        }
    }

    pub fn with_config(mut self, cfg: &RunConfig) -> Self {
        self.config_hash = Some(cfg.hash());
        self.config = Some(json_value(cfg));
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable manifest");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// JSON value of `v` with f32 fields printed at f32 precision (`0.9`, not
/// `0.8999999761581421`).
pub fn json_value<T: Serialize>(v: &T) -> Value {
    serde_json::from_str(&serde_json::to_string(v).expect("serializable")).expect("valid JSON")
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<out>.manifest.json` beside a single-file output.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Texts for vocabulary building: events and targets of `.jsonl` datasets
/// (candidate relation lines included), or raw lines of any other file.
fn corpus_texts(path: &Path) -> Result<Vec<String>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(load_candidates(path)?
            .into_iter()
            .flat_map(|e| e.event_text.into_iter().chain([e.target_text]))
            .collect())
    } else {
        Ok(read_lines(path)?.lines().map(str::to_string).collect())
    }
}

pub fn cmd_build_vocab(inputs: &[PathBuf], min_freq: usize, out: &Path) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::usage("--min-freq must be at least 1"));
    }
    if inputs.is_empty() {
        return Err(Error::usage("no corpus files given"));
    }
    let mut texts = Vec::new();
    let mut manifest = Manifest::new("build-vocab", None);
    for p in inputs {
        texts.extend(corpus_texts(p)?);
        manifest = manifest.input(p)?;
    }
    let vocab = Vocabulary::build(texts.iter().map(String::as_str), min_freq)?;
    vocab.save(out)?;
    manifest.outputs.push(out.to_path_buf());
    manifest.settings = json!({ "min_freq": min_freq, "size": vocab.len() });
    manifest.write(&manifest_path(out))?;
    Ok(vocab)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::usage(format!("missing required path `paths.{what}`")))
}

/// Loads or builds the vocabulary and pins `model.vocab_size` to it.
fn run_vocab(cfg: &mut RunConfig, train_set: &[MultimodalExample], out_dir: &Path) -> Result<Vocabulary> {
    let vocab = match &cfg.paths.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => {
            let texts: Vec<&str> = train_set
                .iter()
                .flat_map(|e| e.event_text.as_deref().into_iter().chain([e.target_text.as_str()]))
                .collect();
            let v = Vocabulary::build(texts, 1)?;
            v.save(&out_dir.join("vocab.txt"))?;
            v
        }
    };
    cfg.model.vocab_size = vocab.len();
    Ok(vocab)
}

fn finish_run(
    command: &str,
    cfg: &RunConfig,
    out_dir: &Path,
    outcome: &TrainOutcome,
    vocab: &Vocabulary,
    extra_inputs: &[&Path],
) -> Result<()> {
    let last = out_dir.join("last.ckpt");
    save_checkpoint(
        &last,
        &Checkpoint {
            config: cfg.clone(),
            params: outcome.params.clone(),
            optimizer: Some(outcome.optimizer.clone()),
            global_step: outcome.global_step,
            vocab: Some(vocab.clone()),
        },
    )?;
    let mut m = Manifest::new(command, Some(cfg.schedule.seed)).with_config(cfg);
    for p in [&cfg.paths.train, &cfg.paths.valid, &cfg.paths.vocab].into_iter().flatten() {
        m = m.input(p)?;
    }
    for p in extra_inputs {
        m = m.input(p)?;
    }
    m.outputs = outcome.checkpoints.clone();
    m.outputs.push(last);
    m.outputs.push(out_dir.join("loss_log.jsonl"));
    m.write(&out_dir.join("manifest.json"))
}

fn load_sets(cfg: &RunConfig) -> Result<(Vec<MultimodalExample>, Vec<MultimodalExample>)> {
    let train_set = load_jsonl(required(&cfg.paths.train, "train")?)?;
    let valid_set = match &cfg.paths.valid {
        Some(p) => load_jsonl(p)?,
        None => Vec::new(),
    };
    Ok((train_set, valid_set))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let d = required(&cfg.paths.out_dir, "out_dir")?.to_path_buf();
    std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

/// Multi-objective pretraining from scratch (or from
/// `paths.init_checkpoint`, continuing its optimizer state).
pub fn cmd_pretrain(mut cfg: RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    let (train_set, valid_set) = load_sets(&cfg)?;
    let init_path = cfg.paths.init_checkpoint.clone();
    let (vocab, params, resume) = match &init_path {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let vocab = init_vocab(&mut cfg, &ck, &train_set, &dir)?;
            check_structure(&cfg, &ck)?;
            (vocab, ck.params, ck.optimizer.map(|o| (o, ck.global_step)))
        }
        None => {
            let vocab = run_vocab(&mut cfg, &train_set, &dir)?;
            let params = ModelParams::init(&cfg.model, cfg.init, cfg.schedule.seed)?;
            (vocab, params, None)
        }
    };
    let outcome = train(&cfg, &vocab, params, resume, &train_set, &valid_set, Some(&dir))?;
    let extra: Vec<&Path> = init_path.as_deref().into_iter().collect();
    finish_run("pretrain", &cfg, &dir, &outcome, &vocab, &extra)?;
    Ok(outcome)
}

fn init_vocab(cfg: &mut RunConfig, ck: &Checkpoint, train_set: &[MultimodalExample], dir: &Path) -> Result<Vocabulary> {
    match (&ck.vocab, &cfg.paths.vocab) {
        (Some(v), Some(p)) => {
            let given = Vocabulary::load(p)?;
            if &given != v {
                return Err(Error::data(format!(
                    "{} differs from the checkpoint's vocabulary",
                    p.display()
                )));
            }
            cfg.model.vocab_size = v.len();
            Ok(v.clone())
        }
        (Some(v), None) => {
            cfg.model.vocab_size = v.len();
            Ok(v.clone())
        }
        (None, _) => run_vocab(cfg, train_set, dir),
    }
}

fn check_structure(cfg: &RunConfig, ck: &Checkpoint) -> Result<()> {
    let diff = cfg.model.structural_diff(ck.params.config());
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::data(format!(
            "checkpoint model configuration differs: {}",
            diff.join(", ")
        )))
    }
}

/// KCG finetuning, from `init_checkpoint`'s parameters (fresh optimizer) or
/// from scratch.
pub fn cmd_finetune(mut cfg: RunConfig, init_checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.tasks != [Objective::Kcg] {
        return Err(Error::usage("finetuning trains the kcg objective only (--tasks kcg)"));
    }
    let dir = out_dir(&cfg)?;
    let (train_set, valid_set) = load_sets(&cfg)?;
    let init = init_checkpoint.map(Path::to_path_buf).or(cfg.paths.init_checkpoint.clone());
    let (vocab, params) = match &init {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let vocab = init_vocab(&mut cfg, &ck, &train_set, &dir)?;
            check_structure(&cfg, &ck)?;
            (vocab, ck.params)
        }
        None => {
            let vocab = run_vocab(&mut cfg, &train_set, &dir)?;
            let params = ModelParams::init(&cfg.model, cfg.init, cfg.schedule.seed)?;
            (vocab, params)
        }
    };
    cfg.paths.init_checkpoint = init.clone();
    let outcome = train(&cfg, &vocab, params, None, &train_set, &valid_set, Some(&dir))?;
    let extra: Vec<&Path> = init.as_deref().into_iter().collect();
    finish_run("finetune", &cfg, &dir, &outcome, &vocab, &extra)?;
    Ok(outcome)
}

/// Training-run entry used by the CLI.
pub fn cmd_train(stage: Stage, cfg: RunConfig) -> Result<TrainOutcome> {
    match stage {
        Stage::Pretrain => cmd_pretrain(cfg),
        Stage::Finetune => cmd_finetune(cfg, None),
    }
}

fn checkpoint_vocab(ck: &Checkpoint, path: &Path) -> Result<Vocabulary> {
    ck.vocab
        .clone()
        .ok_or_else(|| Error::data(format!("{} carries no vocabulary", path.display())))
}

#[derive(Debug, Clone)]
pub struct FilterOutputs {
    pub kept: PathBuf,
    pub dropped: PathBuf,
    pub report: PathBuf,
}

/// Scores relation-tagged candidates with a finetuned checkpoint and keeps
/// those strictly below `threshold`.
pub fn cmd_filter(
    scorer: &Path,
    candidates: &Path,
    threshold: f32,
    use_event: bool,
    outs: &FilterOutputs,
) -> Result<FilterReport> {
    if threshold.is_nan() {
        return Err(Error::usage("threshold must not be NaN"));
    }
    let ck = load_checkpoint(scorer)?;
    let vocab = checkpoint_vocab(&ck, scorer)?;
    let examples = load_candidates(candidates)?;
    for e in &examples {
        e.validate_for(ck.params.config())
            .map_err(|m| Error::data(format!("{}: {m}", e.source_id)))?;
    }
    let mut params = ck.params;
    params.set_dropout(0.0);
    let scored = score_all(&params, &vocab, &examples, use_event)?;
    let (kept, dropped) = filter_dataset(scored, threshold);
    write_jsonl(&outs.kept, &kept)?;
    write_jsonl(&outs.dropped, &dropped)?;
    let mut report = filter_report(&kept, &dropped);
    report.threshold = Some(threshold);
    let text = serde_json::to_string_pretty(&report).expect("serializable report");
    std::fs::write(&outs.report, text + "\n").map_err(|e| Error::io(&outs.report, e))?;
    let mut m = Manifest::new("filter", None).input(scorer)?.input(candidates)?;
    m.outputs = vec![outs.kept.clone(), outs.dropped.clone(), outs.report.clone()];
    m.settings = json!({ "threshold": json_value(&threshold), "use_event": use_event });
    m.write(&manifest_path(&outs.report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub source_id: String,
    pub task: TaskType,
    pub generations: Vec<String>,
}

/// Generates for every distinct `(source_id, task)` inference example and
/// writes a header line followed by one record per example.
pub fn cmd_generate(checkpoint: &Path, dataset: &Path, config: &GenerationConfig, out: &Path) -> Result<Vec<GenerationRecord>> {
    config.validate()?;
    let ck = load_checkpoint(checkpoint)?;
    let vocab = checkpoint_vocab(&ck, checkpoint)?;
    let mut params = ck.params;
    params.set_dropout(0.0);
    let mut seen = HashSet::new();
    let examples: Vec<MultimodalExample> = load_jsonl(dataset)?
        .into_iter()
        .filter(|e| e.task.is_generation())
        .filter(|e| seen.insert((e.source_id.clone(), e.task)))
        .collect();
    for e in &examples {
        e.validate_for(params.config())
            .map_err(|m| Error::data(format!("{}: {m}", e.source_id)))?;
    }
    let records: Vec<GenerationRecord> = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = per_item(config.seed, streams::SAMPLING, i as u64);
            let seqs = generate_with_rng(&params, e, &vocab, config, &mut rng)?;
            let generations = seqs.iter().map(|s| vocab.decode(s)).collect::<Result<_>>()?;
            Ok(GenerationRecord {
                source_id: e.source_id.clone(),
                task: e.task,
                generations,
            })
        })
        .collect::<Result<_>>()?;
    let mut settings = json_value(config);
    settings["num_samples"] = json!(config.samples());
    let header = json!({ "header": settings });
    let mut text = serde_json::to_string(&header).expect("serializable header") + "\n";
    text.push_str(&crate::data::to_jsonl(&records));
    std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
    let mut m = Manifest::new("generate", Some(config.seed)).input(checkpoint)?.input(dataset)?;
    m.outputs = vec![out.to_path_buf()];
    m.settings = json_value(config);
    m.write(&manifest_path(out))?;
    Ok(records)
}

/// Reads a generations file, skipping header lines.
pub fn load_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if v.get("header").is_some() {
            continue;
        }
        out.push(serde_json::from_value(v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub overall: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_task: Option<BTreeMap<String, MetricsReport>>,
}

/// Scores generations against dataset references keyed by
/// `(source_id, task)`. With `group_by_task`, also reports each inference
/// task and a `total` that averages the per-task scores.
pub fn evaluate_records(
    generations: &[GenerationRecord],
    references: &[MultimodalExample],
    training: Option<&[MultimodalExample]>,
    group_by_task: bool,
    unique_mode: UniqueMode,
) -> Result<EvaluationReport> {
    let mut refs: HashMap<(&str, TaskType), Vec<String>> = HashMap::new();
    for r in references {
        refs.entry((r.source_id.as_str(), r.task)).or_default().push(r.target_text.clone());
    }
    let train_sentences: Vec<String> = training
        .unwrap_or(&[])
        .iter()
        .map(|e| normalize(&e.target_text))
        .collect();
    let mut by_task: BTreeMap<TaskType, Vec<EvalExample>> = BTreeMap::new();
    let mut all = Vec::new();
    for g in generations {
        let r = refs.get(&(g.source_id.as_str(), g.task)).ok_or_else(|| {
            Error::data(format!(
                "source_id `{}` (task {}) has no reference",
                g.source_id, g.task
            ))
        })?;
        let ex = EvalExample {
            generated: g.generations.clone(),
            references: r.clone(),
        };
        by_task.entry(g.task).or_default().push(ex.clone());
        all.push(ex);
    }
    if all.is_empty() {
        return Err(Error::data("no generations to evaluate"));
    }
    let corpus = |examples: Vec<EvalExample>| EvalCorpus::new(examples).with_training(&train_sentences);
    let overall = evaluate_corpus(&corpus(all), unique_mode)?;
    let per_task = if group_by_task {
        let mut m = BTreeMap::new();
        for (task, examples) in by_task {
            m.insert(task.as_str().to_string(), evaluate_corpus(&corpus(examples), unique_mode)?);
        }
        let k = m.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| m.values().map(f).sum::<f64>() / k;
        let total = MetricsReport {
            bleu2: mean(|r| r.bleu2),
            cider: mean(|r| r.cider),
            unique: mean(|r| r.unique),
            novel: mean(|r| r.novel),
            n_examples: m.values().map(|r| r.n_examples).sum(),
        };
        m.insert("total".to_string(), total);
        Some(m)
    } else {
        None
    };
    Ok(EvaluationReport { overall, per_task })
}

pub fn cmd_evaluate(
    generations: &Path,
    references: &Path,
    training: Option<&Path>,
    group_by_task: bool,
    unique_mode: UniqueMode,
    out: Option<&Path>,
) -> Result<EvaluationReport> {
    let gens = load_generations(generations)?;
    let refs = load_jsonl(references)?;
    let train_set = training.map(load_jsonl).transpose()?;
    let report = evaluate_records(&gens, &refs, train_set.as_deref(), group_by_task, unique_mode)?;
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(&report).expect("serializable report");
        std::fs::write(out, text + "\n").map_err(|e| Error::io(out, e))?;
        let mut m = Manifest::new("evaluate", None).input(generations)?.input(references)?;
        if let Some(t) = training {
            m = m.input(t)?;
        }
        m.outputs = vec![out.to_path_buf()];
        m.settings = json!({ "group_by_task": group_by_task, "unique_mode": unique_mode });
        m.write(&manifest_path(out))?;
    }
    Ok(report)
}

/// Summary of a checkpoint: configuration, step, tensor shapes.
pub fn cmd_inspect_checkpoint(path: &Path) -> Result<Value> {
    let ck = load_checkpoint(path)?;
    let tensors: BTreeMap<&String, &[usize]> = ck.params.iter().map(|(n, t)| (n, t.shape())).collect();
    Ok(json!({
        "path": path,
        "sha256": file_digest(path)?,
        "global_step": ck.global_step,
        "parameters": ck.params.count(),
        "optimizer_state": ck.optimizer.as_ref().map(|o| o.step),
        "vocab_size": ck.vocab.as_ref().map(Vocabulary::len),
        "config": json_value(&ck.config),
        "tensors": tensors,
    }))
}
