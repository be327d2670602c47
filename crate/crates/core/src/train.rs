//! Training loops shared by pretraining and finetuning.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{Interleave, RunConfig};
use crate::data::{make_batches, score_all, MultimodalExample};
use crate::error::{Error, Result};
use crate::model::{assemble_input, decays, ModelParams, Network};
use crate::rng::{seeded, streams, SeededRng};
use crate::tasks::{batch_losses, BatchItem, LossBreakdown, LossVars, Objective};
use crate::tensor::{AdamW, AdamWState, ParamSlot, Tape};
use crate::vocab::{self, Vocabulary};

/// One optimizer step's losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub objectives: Vec<Objective>,
    pub n_examples: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    /// Mean per-example KCG loss on the validation set, without dropout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_kcg: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// A set of examples assembled for the same objectives.
#[derive(Debug, Clone)]
pub struct Group {
    pub objectives: Vec<Objective>,
    pub items: Vec<BatchItem>,
}

/// Objectives that share an input layout and so can share a forward pass.
fn joint_groups(active: &[Objective]) -> Vec<Vec<Objective>> {
    [
        vec![Objective::Kcg],
        vec![Objective::Mlm, Objective::Mrm],
        vec![Objective::Ap, Objective::Rp],
    ]
    .into_iter()
    .map(|g| g.into_iter().filter(|o| active.contains(o)).collect::<Vec<_>>())
    .filter(|g| !g.is_empty())
    .collect()
}

fn eligible(example: &MultimodalExample, group: &[Objective]) -> bool {
    group.iter().any(|o| o.accepts(example))
}

/// Owns the parameters, optimizer and generators of one run.
pub struct Trainer<'a> {
    pub config: &'a RunConfig,
    pub vocab: &'a Vocabulary,
    pub params: ModelParams,
    pub optimizer: AdamW,
    pub global_step: u64,
    mask_rng: SeededRng,
    dropout_rng: SeededRng,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a RunConfig, vocab: &'a Vocabulary, mut params: ModelParams) -> Result<Self> {
        let diff = config.model.structural_diff(params.config());
        if !diff.is_empty() {
            return Err(Error::data(format!(
                "model configuration does not match the parameters: {}",
                diff.join(", ")
            )));
        }
        if config.model.vocab_size != vocab.len() {
            return Err(Error::data(format!(
                "model.vocab_size is {} but the vocabulary has {} tokens",
                config.model.vocab_size,
                vocab.len()
            )));
        }
        params.set_dropout(config.model.dropout_rate);
        let seed = config.schedule.seed;
        Ok(Self {
            config,
            vocab,
            params,
            optimizer: AdamW::new(config.optimizer),
            global_step: 0,
            mask_rng: seeded(seed, streams::MASKING),
            dropout_rng: seeded(seed, streams::DROPOUT),
        })
    }

    /// Continues from saved optimizer moments and step counter.
    pub fn resume(&mut self, state: AdamWState, global_step: u64) {
        self.optimizer.state = state;
        self.global_step = global_step;
    }

    /// Assembles (and, for masked objectives, masks) every eligible example.
    pub fn assemble(&mut self, examples: &[MultimodalExample], objectives: &[Objective]) -> Result<Vec<BatchItem>> {
        let max = self.config.model.max_positions;
        examples
            .iter()
            .filter(|e| eligible(e, objectives))
            .map(|e| {
                let input = assemble_input(e, self.vocab, objectives, self.config.use_event, max, &mut self.mask_rng)
                    .map_err(|err| Error::data(format!("{}: {err}", e.source_id)))?;
                Ok(BatchItem {
                    example: e.clone(),
                    input,
                })
            })
            .collect()
    }

    /// Every step of one epoch, in execution order.
    pub fn plan_epoch(&mut self, examples: &[MultimodalExample], epoch: usize) -> Result<Vec<Vec<Group>>> {
        let s = &self.config.schedule;
        let (bs, shuffle) = (s.batch_size, s.shuffle);
        let shuffle_seed = s.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64);
        match self.config.interleave {
            Interleave::RoundRobin => {
                let mut queues = Vec::new();
                for &o in &self.config.tasks {
                    let items = self.assemble(examples, &[o])?;
                    let batches = make_batches(items, bs, vocab::PAD, shuffle_seed, shuffle);
                    queues.push((o, batches.into_iter()));
                }
                let mut steps = Vec::new();
                loop {
                    let mut any = false;
                    for (o, q) in &mut queues {
                        if let Some(b) = q.next() {
                            any = true;
                            steps.push(vec![Group {
                                objectives: vec![*o],
                                items: b.items,
                            }]);
                        }
                    }
                    if !any {
                        break;
                    }
                }
                Ok(steps)
            }
            Interleave::Joint => {
                let groups = joint_groups(&self.config.tasks);
                let pool: Vec<MultimodalExample> = examples
                    .iter()
                    .filter(|e| groups.iter().any(|g| eligible(e, g)))
                    .cloned()
                    .collect();
                let mut order: Vec<usize> = (0..pool.len()).collect();
                if shuffle {
                    use rand::seq::SliceRandom;
                    order.shuffle(&mut seeded(shuffle_seed, streams::SHUFFLE));
                }
                let mut steps = Vec::new();
                for chunk in order.chunks(bs) {
                    let batch: Vec<MultimodalExample> = chunk.iter().map(|&i| pool[i].clone()).collect();
                    let mut step = Vec::new();
                    for g in &groups {
                        let items = self.assemble(&batch, g)?;
                        if !items.is_empty() {
                            let padded = make_batches(items, usize::MAX, vocab::PAD, 0, false);
                            step.push(Group {
                                objectives: g.clone(),
                                items: padded.into_iter().next().expect("one batch").items,
                            });
                        }
                    }
                    steps.push(step);
                }
                Ok(steps)
            }
        }
    }

    /// Forward, backward and one AdamW update over `groups`. Returns `None`
    /// (and leaves parameters untouched) when no objective had any units,
    /// e.g. a masked-region batch where no region was drawn.
    pub fn step(&mut self, groups: &[Group]) -> Result<Option<LossBreakdown>> {
        let weights = self.config.loss_weights;
        let mut tape = Tape::<f32>::training();
        let (breakdown, grads) = {
            let net = Network::bind(&self.params, &mut tape);
            let mut vars = LossVars::default();
            for g in groups {
                let v = batch_losses(&net, &mut tape, &g.items, &g.objectives, &mut self.dropout_rng)?;
                for o in Objective::ALL {
                    if let Some(x) = v.get(o) {
                        match o {
                            Objective::Kcg => vars.kcg = Some(x),
                            Objective::Ap => vars.ap = Some(x),
                            Objective::Rp => vars.rp = Some(x),
                            Objective::Mlm => vars.mlm = Some(x),
                            Objective::Mrm => vars.mrm = Some(x),
                        }
                    }
                }
            }
            let terms = vars.values(&tape);
            if Objective::ALL.iter().all(|&o| terms.get(o).is_none()) {
                return Ok(None);
            }
            let total = vars.combine(&mut tape, &weights)?;
            let total_value = tape.value(total).item();
            tape.backward(total)?;
            let grads = net.bound().grads(&tape);
            (
                LossBreakdown {
                    terms,
                    weights,
                    total: total_value,
                },
                grads,
            )
        };
        let slots: Vec<ParamSlot<'_>> = self
            .params
            .iter_mut()
            .map(|(name, t)| ParamSlot {
                name,
                value: t.data_mut(),
                grad: &grads[name],
                decay: decays(name),
            })
            .collect();
        self.optimizer.step(slots)?;
        self.global_step += 1;
        Ok(Some(breakdown))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            optimizer: Some(self.optimizer.state.clone()),
            global_step: self.global_step,
            vocab: Some(self.vocab.clone()),
        }
    }
}

/// Mean per-example teacher-forced KCG loss over the inference examples of
/// `examples`, without dropout. `None` when there are none.
pub fn validation_kcg(
    params: &ModelParams,
    vocab: &Vocabulary,
    examples: &[MultimodalExample],
    use_event: bool,
) -> Result<Option<f32>> {
    let gen: Vec<MultimodalExample> = examples.iter().filter(|e| e.task.is_generation()).cloned().collect();
    if gen.is_empty() {
        return Ok(None);
    }
    let scored = score_all(params, vocab, &gen, use_event)?;
    let sum: f32 = scored.iter().map(|s| s.avg_ce).sum();
    Ok(Some(sum / scored.len() as f32))
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamWState,
    pub global_step: u64,
    pub log: Vec<LogRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.log.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Epoch(_) => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.log.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            LogRecord::Step(_) => None,
        })
    }

    pub fn final_valid_kcg(&self) -> Option<f32> {
        self.epochs().last().and_then(|e| e.valid_kcg)
    }
}

fn append_line(path: &Path, record: &LogRecord) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(record).expect("serializable record")).map_err(|e| Error::io(path, e))
}

/// Runs the configured schedule. With `out_dir`, appends every record to
/// `loss_log.jsonl` and writes `epoch-NNN.ckpt` after each epoch.
pub fn train(
    config: &RunConfig,
    vocab: &Vocabulary,
    params: ModelParams,
    resume: Option<(AdamWState, u64)>,
    train_set: &[MultimodalExample],
    valid_set: &[MultimodalExample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    for e in train_set.iter().chain(valid_set) {
        e.validate_for(&config.model)
            .map_err(|m| Error::data(format!("{}: {m}", e.source_id)))?;
    }
    for &o in &config.tasks {
        if !train_set.iter().any(|e| o.accepts(e)) {
            return Err(Error::data(format!("active task `{o}` has no eligible training examples")));
        }
    }
    let log_path = out_dir.map(|d| d.join("loss_log.jsonl"));
    if let Some(p) = &log_path {
        std::fs::write(p, "").map_err(|e| Error::io(p, e))?;
    }
    let mut trainer = Trainer::new(config, vocab, params)?;
    if let Some((state, step)) = resume {
        trainer.resume(state, step);
    }
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let emit = |r: LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        if let Some(p) = &log_path {
            append_line(p, &r)?;
        }
        log.push(r);
        Ok(())
    };
    let max_steps = config.schedule.max_steps;
    let mut taken = 0u64;
    'epochs: for epoch in 1..=config.schedule.epochs {
        let plan = trainer.plan_epoch(train_set, epoch)?;
        let mut steps = 0;
        let mut stop = false;
        for groups in plan {
            if max_steps.is_some_and(|m| taken >= m) {
                stop = true;
                break;
            }
            let n_examples = groups.iter().map(|g| g.items.len()).sum();
            let objectives = groups.iter().flat_map(|g| g.objectives.iter().copied()).collect();
            if let Some(losses) = trainer.step(&groups)? {
                taken += 1;
                steps += 1;
                let rec = StepRecord {
                    epoch,
                    step: trainer.global_step,
                    objectives,
                    n_examples,
                    losses,
                };
                emit(LogRecord::Step(rec), &mut log)?;
            }
        }
        let valid_kcg = validation_kcg(&trainer.params, vocab, valid_set, config.use_event)?;
        let checkpoint = match out_dir {
            Some(d) => {
                let p = d.join(format!("epoch-{epoch:03}.ckpt"));
                save_checkpoint(&p, &trainer.checkpoint())?;
                checkpoints.push(p.clone());
                Some(p)
            }
            None => None,
        };
        emit(
            LogRecord::Epoch(EpochRecord {
                epoch,
                steps,
                valid_kcg,
                checkpoint,
            }),
            &mut log,
        )?;
        if stop {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        params: trainer.params,
        optimizer: trainer.optimizer.state,
        global_step: trainer.global_step,
        log,
        checkpoints,
    })
}
