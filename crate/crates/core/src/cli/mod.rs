//! The `mixcontext` command line: one subcommand per pipeline stage, driven
//! by a TOML run configuration.
//!
//! Exit codes: 0 success, 1 validation error (arguments, configuration,
//! missing or malformed inputs), 2 runtime error.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::classify::{
    combined_predict, ensemble_predict_with, Fusion, Lexicon, Prediction, Predictor, Source,
};
use crate::corpus::{
    build_samples_with, corpus_stats, gen_synthetic, load_threads, split_train_val, threads_to_jsonl,
    Label, Sample, ThreadFormat, ThreadNode,
};
use crate::eval::{evaluate, MetricsReport};
use crate::textprep::Preprocessor;
use crate::tokenizer::{build_vocab, Vocab};
use crate::train::{train_with, Checkpoint};

pub use config::{EnsembleConfig, Paths, RunConfig};

/// Environment variable holding the log filter (e.g. `info`, `debug`).
pub const LOG_ENV: &str = "MIXCONTEXT_LOG";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "mixcontext", version, about = "Context-aware hate speech classification for code-mixed text")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration override, e.g. `--set train.max_epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize the text of every node in a thread corpus.
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a subword vocabulary from a thread corpus.
    Vocab {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Defaults to `encoder.vocab_size`.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic thread corpus from the `[synth]` section.
    Synth {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train on `paths.data`, writing checkpoints under `paths.output_dir/<name>`.
    Train {
        #[arg(long, default_value = "default")]
        name: String,
    },
    /// Classify every sample of a thread corpus with one checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Lexicon override; defaults to `paths.lexicon`.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Ignore any configured lexicon.
        #[arg(long)]
        no_lexicon: bool,
    },
    /// Classify with the averaged outputs of several checkpoints.
    Ensemble {
        /// Member checkpoints; defaults to `ensemble.members`.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        fusion: Option<FusionArg>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        no_lexicon: bool,
    },
    /// Score predictions against the gold labels of a thread corpus.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print word statistics of a thread corpus.
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FusionArg {
    Probabilities,
    Logits,
}

impl From<FusionArg> for Fusion {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Probabilities => Fusion::Probabilities,
            FusionArg::Logits => Fusion::Logits,
        }
    }
}

/// One line of prediction output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: Label,
    pub p_not: f64,
    pub p_hof: f64,
    pub source: Source,
}

impl PredictionRecord {
    pub fn new(id: &str, p: &Prediction) -> Self {
        PredictionRecord {
            id: id.to_string(),
            label: p.label,
            p_not: p.probs[0],
            p_hof: p.probs[1],
            source: p.source,
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = RunConfig::resolve(cli.config.as_deref(), &cli.sets, cli.seed)?;
    match &cli.command {
        Command::Prep { input, output } => cmd_prep(&config, input, output),
        Command::Vocab { corpus, size, output } => cmd_vocab(
            &config,
            &pick(corpus, &config.paths.data, "--corpus", "paths.data")?,
            size.unwrap_or(config.encoder.vocab_size),
            &pick(output, &config.paths.vocab, "--output", "paths.vocab")?,
        )
        .map(|_| ()),
        Command::Synth { output } => {
            cmd_synth(&config, &pick(output, &config.paths.data, "--output", "paths.data")?)
        }
        Command::Train { name } => cmd_train(&config, name).map(|_| ()),
        Command::Predict {
            checkpoint,
            data,
            output,
            lexicon,
            no_lexicon,
        } => cmd_predict(
            &config,
            checkpoint,
            &pick(data, &config.paths.data, "--data", "paths.data")?,
            output,
            lexicon_path(&config, lexicon, *no_lexicon),
        ),
        Command::Ensemble {
            checkpoints,
            data,
            output,
            fusion,
            lexicon,
            no_lexicon,
        } => {
            let members = if checkpoints.is_empty() {
                config.ensemble.members.clone()
            } else {
                checkpoints.clone()
            };
            cmd_ensemble(
                &config,
                &members,
                fusion.map_or(config.ensemble.fusion, Fusion::from),
                &pick(data, &config.paths.data, "--data", "paths.data")?,
                output,
                lexicon_path(&config, lexicon, *no_lexicon),
            )
        }
        Command::Eval {
            predictions,
            gold,
            output,
        } => cmd_eval(&config, predictions, gold, output).map(|report| {
            print!("{}", render_metrics(&report));
        }),
        Command::Stats { corpus, json } => {
            let corpus = pick(corpus, &config.paths.data, "--corpus", "paths.data")?;
            let stats = cmd_stats(&config, &corpus)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                println!("{stats}");
            }
            Ok(())
        }
    }
}

fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, flag_name: &str, key: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::Validation(format!("no input: pass {flag_name} or set {key}")))
}

fn configured(value: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    value.clone().ok_or_else(|| CliError::Validation(format!("{key} is not set")))
}

fn lexicon_path(config: &RunConfig, flag: &Option<PathBuf>, disabled: bool) -> Option<PathBuf> {
    if disabled {
        None
    } else {
        flag.clone().or_else(|| config.paths.lexicon.clone())
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{}: no such file", path.display())))
    }
}

/// Path of the resolved config written next to `output`.
pub fn config_path_for(output: &Path) -> PathBuf {
    let name = output.file_name().map_or_else(|| "output".into(), |n| n.to_string_lossy().into_owned());
    output.with_file_name(format!("{name}.config.toml"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_output(path: &Path, content: &str, config: &RunConfig) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, content).map_err(|e| CliError::io(path, e))?;
    config.write(&config_path_for(path))
}

fn preprocessor(config: &RunConfig) -> Result<Preprocessor, CliError> {
    Preprocessor::new(&config.prep).map_err(|e| CliError::Validation(format!("[prep]: {e}")))
}

fn threads(path: &Path) -> Result<Vec<ThreadNode>, CliError> {
    require_file(path)?;
    load_threads(path, ThreadFormat::from_path(path))
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn samples(config: &RunConfig, path: &Path) -> Result<Vec<Sample>, CliError> {
    let nodes = threads(path)?;
    build_samples_with(&nodes, &preprocessor(config)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_lexicon(path: Option<PathBuf>) -> Result<Option<Lexicon>, CliError> {
    path.map(|p| {
        require_file(&p)?;
        Lexicon::load(&p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
    })
    .transpose()
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    require_file(path)?;
    Checkpoint::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn cmd_prep(config: &RunConfig, input: &Path, output: &Path) -> Result<(), CliError> {
    let pre = preprocessor(config)?;
    let mut nodes = threads(input)?;
    for node in &mut nodes {
        node.text = pre.preprocess(&node.text);
    }
    write_output(output, &threads_to_jsonl(&nodes), config)
}

pub fn cmd_vocab(config: &RunConfig, corpus: &Path, size: usize, output: &Path) -> Result<Vocab, CliError> {
    let samples = samples(config, corpus)?;
    let texts: Vec<&str> = samples
        .iter()
        .flat_map(|s| std::iter::once(s.target_text.as_str()).chain(s.context_text.as_deref()))
        .collect();
    let vocab = build_vocab(&texts, size).map_err(|e| CliError::Validation(e.to_string()))?;
    write_output(output, &vocab.to_text(), config)?;
    log::info!("vocabulary of {} entries written to {}", vocab.len(), output.display());
    Ok(vocab)
}

pub fn cmd_synth(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let nodes = gen_synthetic(&config.synth).map_err(|e| CliError::Validation(format!("[synth]: {e}")))?;
    write_output(output, &threads_to_jsonl(&nodes), config)
}

/// Trains and returns the best checkpoint's path. The resolved config
/// (with `encoder.vocab_size` set from the vocabulary) is written to the run
/// directory along with every epoch's checkpoint and the training log.
pub fn cmd_train(config: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    let data = configured(&config.paths.data, "paths.data")?;
    let vocab_path = configured(&config.paths.vocab, "paths.vocab")?;
    require_file(&vocab_path)?;
    let vocab = Vocab::load(&vocab_path).map_err(|e| CliError::Validation(format!("{}: {e}", vocab_path.display())))?;
    let all = samples(config, &data)?;
    let (train_set, val_set) =
        split_train_val(&all, &config.split).map_err(|e| CliError::Validation(format!("[split]: {e}")))?;

    let mut resolved = config.clone();
    resolved.encoder.vocab_size = vocab.len();
    resolved.encoder.validate().map_err(|e| CliError::Validation(format!("[encoder]: {e}")))?;
    resolved.train.validate().map_err(|e| CliError::Validation(format!("[train]: {e}")))?;

    let dir = config.paths.output_dir.join(name);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    resolved.write(&dir.join("config.toml"))?;
    let log_path = dir.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;

    let mut failure = None;
    let outcome = train_with(&resolved.encoder, &vocab, &train_set, &val_set, &resolved.train, |record, ckpt| {
        let path = dir.join(format!("epoch{}.ckpt", record.epoch));
        let line = serde_json::to_string(record).expect("record serializes");
        let written = ckpt
            .save(&path)
            .map_err(|e| e.to_string())
            .and_then(|_| writeln!(log_file, "{line}").map_err(|e| format!("{}: {e}", log_path.display())));
        if let Err(e) = written {
            failure = Some(e);
        }
        Ok(())
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(e) = failure {
        return Err(CliError::Runtime(e));
    }
    let best = dir.join("best.ckpt");
    outcome.best.save(&best).map_err(|e| CliError::Runtime(e.to_string()))?;
    log::info!("best epoch {} (val_loss {:.4}) saved to {}", outcome.best.epoch, outcome.best.val_loss, best.display());
    Ok(best)
}

fn write_predictions<F>(config: &RunConfig, data: &Path, output: &Path, mut predict: F) -> Result<(), CliError>
where
    F: FnMut(&Sample) -> Result<Prediction, CliError>,
{
    let samples = samples(config, data)?;
    let mut out = String::new();
    for sample in &samples {
        let p = predict(sample)?;
        out.push_str(&serde_json::to_string(&PredictionRecord::new(&sample.id, &p)).expect("record serializes"));
        out.push('\n');
    }
    write_output(output, &out, config)
}

pub fn cmd_predict(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    output: &Path,
    lexicon: Option<PathBuf>,
) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint)?;
    let lexicon = load_lexicon(lexicon)?;
    write_predictions(config, data, output, |s| {
        combined_predict(&model, lexicon.as_ref(), s).map_err(|e| CliError::Runtime(format!("{}: {e}", s.id)))
    })
}

pub fn cmd_ensemble(
    config: &RunConfig,
    members: &[PathBuf],
    fusion: Fusion,
    data: &Path,
    output: &Path,
    lexicon: Option<PathBuf>,
) -> Result<(), CliError> {
    if members.is_empty() {
        return Err(CliError::Validation(
            "no ensemble members: pass --checkpoint or set ensemble.members".into(),
        ));
    }
    let models = members.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>, _>>()?;
    let lexicon = load_lexicon(lexicon)?;
    let ensemble = FusedMembers { models: &models, fusion };
    write_predictions(config, data, output, |s| {
        combined_predict(&ensemble, lexicon.as_ref(), s).map_err(|e| CliError::Runtime(format!("{}: {e}", s.id)))
    })
}

struct FusedMembers<'a> {
    models: &'a [Checkpoint],
    fusion: Fusion,
}

impl Predictor for FusedMembers<'_> {
    fn predict(&self, sample: &Sample) -> Result<Prediction, crate::classify::ClassifyError> {
        ensemble_predict_with(self.models, sample, self.fusion)
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Validation(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn cmd_eval(config: &RunConfig, predictions: &Path, gold: &Path, output: &Path) -> Result<MetricsReport, CliError> {
    let records = read_predictions(predictions)?;
    let samples = samples(config, gold)?;
    let mut by_id = std::collections::HashMap::with_capacity(records.len());
    for r in &records {
        if by_id.insert(r.id.as_str(), r.label).is_some() {
            return Err(CliError::Validation(format!("{}: duplicate id {}", predictions.display(), r.id)));
        }
    }
    if by_id.len() != samples.len() {
        return Err(CliError::Validation(format!(
            "{} has {} predictions but {} has {} samples",
            predictions.display(),
            by_id.len(),
            gold.display(),
            samples.len()
        )));
    }
    let mut golds = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    let mut flags = Vec::with_capacity(samples.len());
    for s in &samples {
        let pred = by_id
            .get(s.id.as_str())
            .ok_or_else(|| CliError::Validation(format!("{}: no prediction for {}", predictions.display(), s.id)))?;
        golds.push(s.label);
        preds.push(*pred);
        flags.push(s.is_contextual);
    }
    let report = evaluate(&golds, &preds, &flags).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_output(output, &report.to_json(), config)?;
    Ok(report)
}

/// Confusion matrix and macro scores as text.
pub fn render_metrics(report: &MetricsReport) -> String {
    let cm = crate::eval::ConfusionMatrix { cells: report.confusion };
    format!(
        "{}macro precision {:.2}  recall {:.2}  f1 {:.2}\n",
        cm.render(),
        100.0 * report.macro_precision,
        100.0 * report.macro_recall,
        100.0 * report.macro_f1
    )
}

pub fn cmd_stats(config: &RunConfig, corpus: &Path) -> Result<crate::corpus::CorpusStats, CliError> {
    Ok(corpus_stats(&samples(config, corpus)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_validation_code() {
        assert_eq!(main_with_args(["mixcontext", "frobnicate"]), 1);
        assert_eq!(main_with_args(["mixcontext", "stats", "--corpus", "/nonexistent/x.jsonl"]), 1);
        assert_eq!(main_with_args(["mixcontext", "--help"]), 0);
    }

    #[test]
    fn config_path_sits_beside_output() {
        assert_eq!(config_path_for(Path::new("out/preds.jsonl")), PathBuf::from("out/preds.jsonl.config.toml"));
    }
}
