use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use viscom::commands::{
    cmd_build_vocab, cmd_evaluate, cmd_filter, cmd_generate, cmd_inspect_checkpoint, cmd_train, FilterOutputs,
};
use viscom::config::{parse_tasks, Interleave, Preset, RunConfig, Stage};
use viscom::data::{generate_candidates, generate_corpus, split_by_source, write_jsonl, SynthConfig};
use viscom::generate::{DecodeMode, GenerationConfig};
use viscom::metrics::UniqueMode;
use viscom::Error;

#[derive(Parser)]
#[command(name = "viscom", version, about = "Multimodal commonsense generation: pretrain, finetune, filter, generate, evaluate")]
struct Cli {
    /// Worker threads for scoring and generation (training is single-threaded).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSON configuration merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated objectives: kcg,ap,rp,mlm,mrm.
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    use_event: Option<bool>,
    /// round-robin | joint
    #[arg(long)]
    interleave: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from datasets (.jsonl) or plain-text corpora.
    BuildVocab {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-objective pretraining. Any config field can be set with `--section.field value`.
    Pretrain(TrainArgs),
    /// Commonsense-generation finetuning, optionally from a checkpoint.
    Finetune(TrainArgs),
    /// Score candidate descriptions and keep those below the threshold.
    Filter {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value_t = 3.5)]
        threshold: f32,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        use_event: bool,
        #[arg(long)]
        kept: PathBuf,
        #[arg(long)]
        dropped: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Decode inferences for every example of a dataset.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// greedy | nucleus
        #[arg(long, default_value = "greedy")]
        mode: String,
        #[arg(long, default_value_t = 0.9)]
        top_p: f32,
        #[arg(long, default_value_t = 1)]
        num_samples: usize,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        use_event: bool,
    },
    /// BLEU-2, CIDEr-D, Unique and Novel for a generations file.
    Evaluate {
        #[arg(long)]
        generations: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        group_by_task: bool,
        /// Count distinct sentences for Unique instead of exactly-once ones.
        #[arg(long)]
        unique_distinct: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint's configuration and tensor shapes.
    InspectCheckpoint { path: PathBuf },
    /// Write a templated synthetic corpus (train/valid/candidates).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        images: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        noise_frac: f32,
    },
}

/// Splits `--a.b value` / `--a.b=value` config overrides from the rest.
fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), Error> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key.replace('-', "_"), value));
    }
    Ok((rest, overrides))
}

fn run_config(stage: Stage, a: TrainArgs, mut overrides: Vec<(String, String)>) -> Result<RunConfig, Error> {
    let preset: Preset = a.preset.parse()?;
    let mut push = |k: &str, v: String| overrides.push((k.to_string(), v));
    if let Some(s) = a.seed {
        push("schedule.seed", s.to_string());
    }
    if let Some(t) = a.tasks {
        push("tasks", serde_json::to_string(&parse_tasks(&t)?).expect("json"));
    }
    if let Some(u) = a.use_event {
        push("use_event", u.to_string());
    }
    if let Some(i) = a.interleave {
        let i: Interleave = i.parse()?;
        push("interleave", serde_json::to_string(&i).expect("json"));
    }
    if let Some(e) = a.epochs {
        push("schedule.epochs", e.to_string());
    }
    for (key, p) in [
        ("paths.train", a.train),
        ("paths.valid", a.valid),
        ("paths.vocab", a.vocab),
        ("paths.out_dir", a.out_dir),
        ("paths.init_checkpoint", a.init_checkpoint),
    ] {
        if let Some(p) = p {
            push(key, serde_json::to_string(&p).expect("json"));
        }
    }
    RunConfig::resolve(preset, stage, a.config.as_deref(), &overrides)
}

fn print_json<T: serde::Serialize>(v: &T) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(&viscom::commands::json_value(v)).expect("serializable");
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::usage(e.to_string()))?;
    }
    let is_train = matches!(cli.command, Command::Pretrain(_) | Command::Finetune(_));
    if !overrides.is_empty() && !is_train {
        return Err(Error::usage(format!("unexpected argument --{}", overrides[0].0)));
    }
    match cli.command {
        Command::BuildVocab { inputs, min_freq, out } => {
            let v = cmd_build_vocab(&inputs, min_freq, &out)?;
            eprintln!("wrote {} tokens to {}", v.len(), out.display());
        }
        Command::Pretrain(a) => {
            let o = cmd_train(Stage::Pretrain, run_config(Stage::Pretrain, a, overrides)?)?;
            eprintln!("pretraining finished after {} steps", o.global_step);
        }
        Command::Finetune(a) => {
            let o = cmd_train(Stage::Finetune, run_config(Stage::Finetune, a, overrides)?)?;
            eprintln!("finetuning finished after {} steps", o.global_step);
        }
        Command::Filter {
            checkpoint,
            candidates,
            threshold,
            use_event,
            kept,
            dropped,
            report,
        } => {
            let r = cmd_filter(&checkpoint, &candidates, threshold, use_event, &FilterOutputs { kept, dropped, report })?;
            print_json(&r);
        }
        Command::Generate {
            checkpoint,
            dataset,
            out,
            mode,
            top_p,
            num_samples,
            max_len,
            seed,
            use_event,
        } => {
            let mode = match mode.as_str() {
                "greedy" => DecodeMode::Greedy,
                "nucleus" => DecodeMode::Nucleus,
                m => return Err(Error::usage(format!("unknown mode `{m}` (greedy|nucleus)"))),
            };
            let cfg = GenerationConfig {
                mode,
                top_p,
                max_len,
                num_samples,
                seed,
                use_event,
            };
            let r = cmd_generate(&checkpoint, &dataset, &cfg, &out)?;
            eprintln!("wrote generations for {} examples to {}", r.len(), out.display());
        }
        Command::Evaluate {
            generations,
            references,
            training,
            group_by_task,
            unique_distinct,
            out,
        } => {
            let mode = if unique_distinct { UniqueMode::Distinct } else { UniqueMode::ExactlyOnce };
            let r = cmd_evaluate(&generations, &references, training.as_deref(), group_by_task, mode, out.as_deref())?;
            print_json(&r);
        }
        Command::InspectCheckpoint { path } => print_json(&cmd_inspect_checkpoint(&path)?),
        Command::Synth {
            out_dir,
            images,
            seed,
            noise_frac,
        } => {
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let cfg = SynthConfig {
                n_images: images,
                seed,
                ..SynthConfig::default()
            };
            let (train, valid) = split_by_source(&generate_corpus(&cfg), 4);
            write_jsonl(&out_dir.join("train.jsonl"), &train)?;
            write_jsonl(&out_dir.join("valid.jsonl"), &valid)?;
            let cands = generate_candidates(&cfg, noise_frac);
            write_jsonl(&out_dir.join("candidates.jsonl"), &cands)?;
            eprintln!(
                "wrote {} train, {} valid, {} candidate records to {}",
                train.len(),
                valid.len(),
                cands.len(),
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = match extract_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
