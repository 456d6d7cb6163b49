// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end. Every command writes a run directory with a
//! manifest under `--out`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::detect_heads;
use crate::circuit::{overlap, CircuitGraph};
use crate::error::{Error, Result};
use crate::intervention::{repair_experiment_with, RepairConfig, RepairVariant};
use crate::model::{Model, Tokenizer};
use crate::patching::{sweep_heads, ImportanceMatrix, SweepConfig};
use crate::report::{
    emit_grid, emit_intervention, pairs_csv, run_recipe, sha256_file, sha256_hex, ExperimentRecipe, RunDir,
};
use crate::tasks::{eval_accuracy, read_dataset, write_dataset, DatasetSpec, PromptPair, Task};

pub const THREADS_ENV: &str = "CIRCUIT_PROBE_THREADS";
pub const MODEL_DIR_ENV: &str = "CIRCUIT_PROBE_MODEL_DIR";

#[derive(Debug, Parser, Serialize)]
#[command(name = "circuit-probe", version, about = "Path patching and attention interventions for GPT-2 models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate a dataset of prompt pairs.
    Generate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Greedy accuracy on a dataset.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Restrict the argmax to each example's answer choices.
        #[arg(long)]
        restrict_choices: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Path-patch every head to a set of receivers.
    Patch {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Stage label used for output files.
        #[arg(long, default_value = "to-logits")]
        stage: String,
        /// `logits` or `site:heads`, e.g. `q:15.14,16.15`.
        #[arg(long, default_value = "logits")]
        receivers: String,
        #[arg(long, default_value = "end")]
        sender_positions: String,
        #[arg(long, default_value = "all")]
        receiver_positions: String,
        #[arg(long, default_value_t = 100)]
        sample_n: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Force attention heads onto the wrong colors and measure the repair.
    Intervene {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// `both`, `inhibition` or `negmover`.
        #[arg(long, default_value = "both")]
        variant: String,
        /// To-logits grid CSV for the attribution correlation.
        #[arg(long)]
        to_logits: Option<PathBuf>,
        /// Mover-query grid CSV used to choose between 13.13 and 13.14.
        #[arg(long)]
        resolve_with: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Duplicate-token and induction scores for every head.
    Detect {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        seq_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Overlap of two circuits given as stage-aligned grid CSVs.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        a: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        b: Vec<PathBuf>,
        /// Fraction of heads kept per stage.
        #[arg(long, default_value_t = 0.02)]
        threshold: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a TOML experiment recipe.
    Report {
        #[arg(long)]
        recipe: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Directory with `config.json` and `model.safetensors`.
    #[arg(long, env = MODEL_DIR_ENV)]
    pub model_dir: Option<PathBuf>,
    /// Use a small random model over the GPT-2 vocabulary.
    #[arg(long, conflicts_with = "model_dir")]
    pub toy: bool,
    #[arg(long, default_value_t = 0)]
    pub toy_seed: u64,
}

impl ModelArgs {
    /// The model and the hash of its weights.
    pub fn load(&self) -> Result<(Model, String)> {
        if self.toy {
            let model = Model::toy_gpt2(self.toy_seed)?;
            let hash = sha256_hex(&model.weights().to_safetensors_bytes()?);
            return Ok((model, hash));
        }
        let dir = self
            .model_dir
            .as_ref()
            .ok_or_else(|| Error::Config(format!("no model: pass --model-dir, set {MODEL_DIR_ENV}, or use --toy")))?;
        let model = Model::load_dir(dir)?;
        Ok((model, sha256_file(&dir.join("model.safetensors"))?))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Read pairs from a JSONL file instead of generating them.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "colored-objects")]
    pub task: Task,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DataArgs {
    pub fn load(&self, tokenizer: &Tokenizer) -> Result<Vec<PromptPair>> {
        match &self.dataset {
            Some(path) => read_dataset(path, tokenizer),
            None => DatasetSpec::new(self.task, self.n, self.seed).generate(tokenizer),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// Base directory for run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Run name; defaults to the command name.
    #[arg(long)]
    pub name: Option<String>,
}

impl OutArgs {
    fn open(&self, command: &str, seed: u64, args_hash: String) -> Result<RunDir> {
        RunDir::create(&self.out, self.name.as_deref().unwrap_or(command), seed, args_hash)
    }
}

fn read_grid(path: &Path) -> Result<ImportanceMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ImportanceMatrix::from_csv(&text, &label)
}

/// Caps the global rayon pool at `CIRCUIT_PROBE_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value.parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={value} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

/// Executes one command and returns the run directory it wrote.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let args_hash = sha256_hex(serde_json::to_string(cli)?.as_bytes());
    match &cli.command {
        Command::Generate { data, out } => {
            let tokenizer = Tokenizer::bundled_gpt2()?;
            let pairs = data.load(&tokenizer)?;
            let mut run = out.open("generate", data.seed, args_hash)?;
            write_dataset(run.data_path("dataset.jsonl"), &pairs, &tokenizer)?;
            run.record_data("generate", "dataset.jsonl")?;
            Ok(run.finish()?.0)
        }
        Command::Eval { model, data, restrict_choices, out } => {
            let (model_, weights) = model.load()?;
            let pairs = data.load(model_.tokenizer()?)?;
            let report = if *restrict_choices {
                let reports = pairs
                    .iter()
                    .map(|p| eval_accuracy(&model_, std::slice::from_ref(p), Some(&p.choices())))
                    .collect::<Result<Vec<_>>>()?;
                let predictions = reports.into_iter().map(|r| r.predictions[0]).collect();
                crate::tasks::EvalReport::from_predictions(&pairs, predictions)
            } else {
                eval_accuracy(&model_, &pairs, None)?
            };
            let mut run = out.open("eval", data.seed, args_hash)?;
            run.set_weights_hash(Some(weights));
            run.write_json("eval", "eval.json", &report)?;
            println!("accuracy {:.4} in-choice {:.4} n {}", report.accuracy, report.in_choice_rate, report.n);
            Ok(run.finish()?.0)
        }
        Command::Patch { model, data, stage, receivers, sender_positions, receiver_positions, sample_n, out } => {
            let (model_, weights) = model.load()?;
            let pairs = data.load(model_.tokenizer()?)?;
            let config = SweepConfig {
                receivers: receivers.parse()?,
                sender_positions: sender_positions.parse()?,
                receiver_positions: receiver_positions.parse()?,
                sample_n: *sample_n,
                stage_label: stage.clone(),
            };
            let grid = sweep_heads(&model_, &pairs, &config)?;
            let mut run = out.open("patch", data.seed, args_hash)?;
            run.set_weights_hash(Some(weights));
            emit_grid(&mut run, &format!("patch:{stage}"), &grid)?;
            for (rank, (head, score)) in grid.ranked().into_iter().take(10).enumerate() {
                println!("{:>2}. {head:<6} {score:+.2}%", rank + 1);
            }
            Ok(run.finish()?.0)
        }
        Command::Intervene { model, data, variant, to_logits, resolve_with, out } => {
            let (model_, weights) = model.load()?;
            let pairs = data.load(model_.tokenizer()?)?;
            let variant: RepairVariant = variant.parse()?;
            let mut config = RepairConfig::default();
            if let Some(path) = resolve_with {
                config = config.resolve_inhibition(&read_grid(path)?)?;
            }
            config.to_logits = to_logits.as_deref().map(read_grid).transpose()?;
            let report = repair_experiment_with(&model_, &pairs, variant, &config)?;
            let mut run = out.open("intervene", data.seed, args_hash)?;
            run.set_weights_hash(Some(weights));
            emit_intervention(&mut run, &variant.to_string(), &report)?;
            println!(
                "accuracy {:.4} -> {:.4}, new mistakes {}, fixed {}",
                report.accuracy_before, report.accuracy_after, report.new_mistakes, report.fixed
            );
            Ok(run.finish()?.0)
        }
        Command::Detect { model, n, seq_len, seed, out } => {
            let (model_, weights) = model.load()?;
            let scores = detect_heads(&model_, *seed, *n, *seq_len)?;
            let mut run = out.open("detect", *seed, args_hash)?;
            run.set_weights_hash(Some(weights));
            for (label, grid) in [("duplicate", &scores.duplicate), ("induction", &scores.induction)] {
                emit_grid(&mut run, "detect", &ImportanceMatrix::new(grid.clone(), format!("detect-{label}")))?;
            }
            Ok(run.finish()?.0)
        }
        Command::Compare { a, b, threshold, out } => {
            let load = |paths: &[PathBuf], task: &str| -> Result<CircuitGraph> {
                CircuitGraph::new(task, paths.iter().map(|p| read_grid(p)).collect::<Result<_>>()?)
            };
            let report = overlap(&load(a, "a")?, &load(b, "b")?, *threshold)?;
            let mut run = out.open("compare", 0, args_hash)?;
            run.write_json("compare", "overlap.json", &report)?;
            for diff in &report.stage_differences {
                emit_grid(&mut run, "compare", diff)?;
            }
            let shared: Vec<String> = report.shared.iter().map(|h| h.to_string()).collect();
            run.write_data(
                "compare",
                "overlap.csv",
                pairs_csv(
                    ("quantity", "value"),
                    [
                        ("shared", report.shared.len() as f64),
                        ("union", report.union_size() as f64),
                        ("overlap", report.overlap),
                    ],
                )
                .as_bytes(),
            )?;
            println!(
                "overlap {}/{} = {:.3}; shared {}",
                report.shared.len(),
                report.union_size(),
                report.overlap,
                shared.join(" ")
            );
            Ok(run.finish()?.0)
        }
        Command::Report { recipe, model } => {
            let (recipe, hash) = ExperimentRecipe::load(recipe)?;
            let model = match (&recipe.model_dir, model.model_dir.is_none() && !model.toy) {
                (Some(dir), true) => ModelArgs { model_dir: Some(dir.clone()), ..model.clone() },
                _ => model.clone(),
            };
            let (model_, weights) = model.load()?;
            let (root, _) = run_recipe(&recipe, &hash, &model_, Some(weights))?;
            Ok(root)
        }
    }
}

/// Parses `args`, runs the command and maps errors to a nonzero exit.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|()| execute(&cli));
    match result {
        Ok(root) => {
            println!("wrote {}", root.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
