//! Command-line surface. Machine output is JSON on stdout; diagnostics go
//! to stderr. Exit codes: 0 success, 1 usage, 2 data or format, 3 divergence.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::causal;
use crate::error::{Error, Result};
use crate::evaluator::{self, EvalReport, Task};
use crate::feature_store::{
    inject_nuisance, load_bundle, synth_bundle, SynthSpec, DEFAULT_PROMPT_BIAS, DEFAULT_PROMPT_NOISE, DEFAULT_TEMPERATURE,
};
use crate::networks::Model;
use crate::trainer::{fit, ClassScope, TrainConfig};

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Parser)]
#[command(name = "ample", version, about = "Adaptive-debiased ensemble multi-prompt learning on cached VLM features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic feature bundle.
    Synth(SynthArgs),
    /// Fit a model and write a checkpoint plus a JSONL loss log.
    Train(TrainArgs),
    /// Score one or more checkpoints; several are averaged.
    Eval(EvalArgs),
    /// Compare interventional and adjusted distributions on random SCMs.
    VerifyCausal(VerifyCausalArgs),
    /// Summarize a bundle and check its stored logits.
    Inspect(InspectArgs),
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub c: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    /// Per-backbone feature dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 16])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub sep: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_PROMPT_NOISE)]
    pub prompt_noise: f64,
    #[arg(long, default_value_t = DEFAULT_PROMPT_BIAS)]
    pub prompt_bias: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub tau: f64,
    /// Append an image coordinate of this scale that no prompt carries.
    #[arg(long)]
    pub nuisance: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeArg {
    Base,
    All,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub warmup_lr: f64,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Train on base classes only, or on every class.
    #[arg(long, value_enum, default_value_t = ScopeArg::Base)]
    pub classes: ScopeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    B2n,
    Transfer,
    Dg,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = TaskArg::B2n)]
    pub task: TaskArg,
    /// Target bundle for transfer and domain generalization.
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct VerifyCausalArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub max_card: usize,
}

#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub bundle: PathBuf,
}

/// Parses `argv` (including the program name) and executes it.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    let value = match command {
        Command::Synth(args) => synth(&args)?,
        Command::Train(args) => train(&args)?,
        Command::Eval(args) => eval(&args)?,
        Command::VerifyCausal(args) => verify_causal(&args)?,
        Command::Inspect(args) => inspect(&args)?,
    };
    let text = serde_json::to_string_pretty(&value)?;
    writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn synth(args: &SynthArgs) -> Result<serde_json::Value> {
    let spec = SynthSpec {
        prompt_noise: args.prompt_noise,
        prompt_bias: args.prompt_bias,
        temperature: args.tau,
        ..SynthSpec::new(args.n, args.c, args.m, args.dims.clone(), args.sep)
    };
    let mut bundle = synth_bundle(&spec, args.seed)?;
    if let Some(scale) = args.nuisance {
        bundle = inject_nuisance(&bundle, scale, args.seed.wrapping_add(1))?;
    }
    bundle.save(&args.out)?;
    log::info!("wrote synthetic bundle to {}", args.out.display());
    Ok(json!({ "command": "synth", "args": args }))
}

fn train(args: &TrainArgs) -> Result<serde_json::Value> {
    let bundle = load_bundle(&args.bundle, true)?;
    let config = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        lr: args.lr,
        warmup_epochs: args.warmup_epochs,
        warmup_lr: args.warmup_lr,
        alpha: args.alpha,
        beta: args.beta,
        seed: args.seed,
        hidden_dim: args.hidden_dim,
        classes: match args.classes {
            ScopeArg::Base => ClassScope::Base,
            ScopeArg::All => ClassScope::All,
        },
    };
    let state = fit(&bundle, &config)?;
    state.model.save(&args.out)?;
    write_log(&args.out.join(TRAIN_LOG_FILE), &state.loss_history)?;
    let last = state.loss_history.last();
    log::info!("trained {} steps, checkpoint at {}", state.step, args.out.display());
    Ok(json!({
        "command": "train",
        "args": args,
        "steps": state.step,
        "epochs": state.epoch,
        "epoch_mean_loss": state.epoch_means(),
        "final": last,
    }))
}

fn write_log<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn eval(args: &EvalArgs) -> Result<serde_json::Value> {
    let source = load_bundle(&args.bundle, true)?;
    let target = match (args.task, &args.target) {
        (TaskArg::B2n, _) => None,
        (_, Some(path)) => Some(load_bundle(path, true)?),
        (_, None) => return Err(Error::Config("--target is required for transfer and dg".into())),
    };
    let mut reports: Vec<EvalReport> = Vec::with_capacity(args.ckpt.len());
    for ckpt in &args.ckpt {
        let model = Model::load(ckpt)?;
        let report = match (args.task, &target) {
            (TaskArg::B2n, _) => evaluator::eval_base_to_novel(&model, &source)?,
            (TaskArg::Transfer, Some(t)) => evaluator::eval_transfer(&model, t, Task::CrossDataset)?,
            (TaskArg::Dg, Some(t)) => evaluator::eval_transfer(&model, t, Task::DomainGen)?,
            _ => unreachable!("target presence checked above"),
        };
        reports.push(report);
    }
    Ok(serde_json::to_value(evaluator::average(&reports)?)?)
}

fn verify_causal(args: &VerifyCausalArgs) -> Result<serde_json::Value> {
    let report = causal::verify_identity(args.trials, args.max_card, args.seed)?;
    let witness = causal::find_confounded_witness(0.05, args.seed, 10_000).map(|(_, z, gap)| json!({ "z": z, "gap": gap }));
    Ok(json!({ "identity": report, "confounding_witness": witness }))
}

fn inspect(args: &InspectArgs) -> Result<serde_json::Value> {
    let bundle = load_bundle(&args.bundle, false)?;
    let m = bundle.manifest();
    let consistency = bundle.logit_consistency();
    Ok(json!({
        "dataset_name": m.dataset_name,
        "num_samples": m.num_samples,
        "num_classes": m.num_classes,
        "num_prompts": m.num_prompts,
        "backbones": m.backbones,
        "temperature": m.temperature,
        "splits": {
            "train": m.splits.train.len(),
            "val": m.splits.val.len(),
            "test": m.splits.test.len(),
        },
        "logit_consistency": {
            "passes": consistency.passes(),
            "max_abs_deviation": consistency.max_abs_deviation,
            "worst": consistency.worst,
        },
    }))
}
