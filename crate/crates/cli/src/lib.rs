//! Command-line driver: dataset extension, training, evaluation, prediction
//! and the gradient self-check.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use cqa_core::checkpoint::{AnyModel, Checkpoint, Persist};
use cqa_core::dataset::{extend_dataset, load_corpus, load_unlabeled, positive_rates, threads_from_triples, write_corpus, Triple};
use cqa_core::eval::{candidates, rank_candidates, score_examples, evaluate_lists, tune_alpha_candidates, write_predictions};
use cqa_core::model::{prepare_examples, vocabulary_for, Example, ModelDims, MtlModel, Network, PairModel, WordVectors};
use cqa_core::text::Vocabulary;
use cqa_core::train::{train, TrainOutcome};
use cqa_core::verify::{mtl_gradient_check, GradCheckSetup, GradientFault};
use cqa_core::Task;

pub use config::{ModelChoice, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "cqa", version, about = "Multitask convolutional rerankers for forum question answering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append one (question, question, comment) triple per thread comment
    Extend {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Train a model and write checkpoint(s) plus a per-epoch CSV report
    Train {
        /// Flat key=value configuration file
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Override a configuration key, e.g. `--set seed=3` (repeatable)
        #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a labeled corpus, print MAP/MRR and write ranked predictions
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Task to rank for; defaults to the checkpoint's task for single-task models
        #[arg(long)]
        task: Option<Task>,
        /// Mix model scores with 1/google_rank: alpha * score + (1 - alpha) / rank
        #[arg(long, conflicts_with = "tune_on")]
        alpha: Option<f64>,
        /// Pick alpha by grid search on this labeled corpus
        #[arg(long)]
        tune_on: Option<PathBuf>,
        /// Prediction TSV: group, doc, rank, score, label
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Score a corpus without labels and write ranked predictions
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Prediction TSV: group, doc, rank, score
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Finite-difference check of the joint network's gradients in 64-bit
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        feature_maps: usize,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    Conv,
}

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: i32, error: anyhow::Error) -> Self {
        Failure { code, error }
    }

    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_USAGE, error.into())
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_DATA, error.into())
    }

    pub fn numeric(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_NUMERIC, error.into())
    }
}

impl From<cqa_core::Error> for Failure {
    fn from(e: cqa_core::Error) -> Self {
        use cqa_core::Error as E;
        let code = match &e {
            E::InvalidArgument(_) => EXIT_USAGE,
            E::NonFinite(_) => EXIT_NUMERIC,
            E::Io { .. } | E::Parse { .. } | E::Shape(_) | E::IdOutOfRange { .. } | E::Empty(_) | E::Checkpoint(_) => {
                EXIT_DATA
            }
        };
        Failure::new(code, e.into())
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn run<I, S>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

pub fn execute(command: Command, out: &mut dyn std::io::Write) -> CmdResult {
    match command {
        Command::Extend { input, output } => cmd_extend(&input, &output, out),
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides).map_err(Failure::usage)?;
            cmd_train(&cfg, out)
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            task,
            alpha,
            tune_on,
            output,
        } => cmd_evaluate(&checkpoint, &corpus, task, alpha, tune_on.as_deref(), &output, out),
        Command::Predict {
            checkpoint,
            corpus,
            task,
            alpha,
            output,
        } => cmd_predict(&checkpoint, &corpus, task, alpha, &output),
        Command::Gradcheck {
            probes,
            seed,
            feature_maps,
            inject_fault,
        } => cmd_gradcheck(probes, seed, feature_maps, inject_fault, out),
    }
}

fn say(out: &mut dyn std::io::Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::data(anyhow!(e).context("writing to stdout")))
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn rates_line(rates: [f64; 3]) -> String {
    format!("{:.2}/{:.2}/{:.2}", rates[0], rates[1], rates[2])
}

pub fn cmd_extend(input: &Path, output: &Path, out: &mut dyn std::io::Write) -> CmdResult {
    let original = load_corpus(input)?;
    let extended = extend_dataset(&threads_from_triples(&original));
    let mut all = original.clone();
    all.extend(extended.iter().cloned());
    let mut buf = Vec::new();
    write_corpus(&mut buf, &all).map_err(|e| Failure::data(anyhow!(e)))?;
    write_atomic(output, &buf).map_err(Failure::data)?;

    let mut msg = String::new();
    let _ = writeln!(msg, "original: {}", original.len());
    let _ = writeln!(msg, "extended: +{}", extended.len());
    let _ = writeln!(msg, "total: {}", all.len());
    let _ = writeln!(msg, "positive % (A/B/C) original: {}", rates_line(positive_rates(&original)?));
    let _ = writeln!(msg, "positive % (A/B/C) with extension: {}", rates_line(positive_rates(&all)?));
    say(out, &msg)
}

fn checkpoint_name(task: Option<Task>) -> String {
    match task {
        None => "model.ckpt".to_string(),
        Some(t) => format!("model_{t}.ckpt"),
    }
}

fn save_snapshots<N: Persist<f32>>(
    outcome: &TrainOutcome<N>,
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> Result<Vec<PathBuf>, Failure> {
    let mut written = Vec::new();
    for snap in &outcome.snapshots {
        let path = cfg.out_dir.join(checkpoint_name(snap.task));
        let bytes = Checkpoint::from_model(&snap.model, vocab, cfg.max_len).to_bytes();
        write_atomic(&path, &bytes).map_err(Failure::data)?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn std::io::Write) -> CmdResult {
    let train_triples = load_corpus(&cfg.train)?;
    let dev_triples = load_corpus(&cfg.dev)?;
    let vocab = vocabulary_for(&train_triples, cfg.max_len, cfg.min_count);
    let train_set = prepare_examples(&train_triples, &vocab, cfg.max_len)?;
    let dev_set = prepare_examples(&dev_triples, &vocab, cfg.max_len)?;

    let vectors = match &cfg.vectors {
        Some(p) => Some(WordVectors::load(p)?),
        None => None,
    };
    let mut dims = ModelDims {
        vocab_size: vocab.len(),
        word_dim: cfg.word_dim,
        feat_dim: cfg.feat_dim,
        feature_maps: cfg.feature_maps,
        filter_width: cfg.filter_width,
    };
    if let Some(v) = &vectors {
        if cfg.word_dim_explicit && v.dim() != cfg.word_dim {
            return Err(Failure::usage(anyhow!(
                "word_dim = {} but the vectors have dimension {}",
                cfg.word_dim,
                v.dim()
            )));
        }
        dims.word_dim = v.dim();
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))
        .map_err(Failure::data)?;

    let tc = &cfg.training;
    let (report, written) = match cfg.model {
        ModelChoice::Mtl => {
            let mut model: MtlModel<f32> = MtlModel::new(dims, tc.seed)?;
            if let Some(v) = &vectors {
                model.load_pretrained(v, &vocab)?;
            }
            let outcome = train(model, &train_set, &dev_set, tc)?;
            let written = save_snapshots(&outcome, &vocab, cfg)?;
            (outcome.report, written)
        }
        ModelChoice::Pair => {
            let task = single_task(tc.active_tasks)?;
            let mut model: PairModel<f32> = PairModel::new(task, dims, tc.seed)?;
            if let Some(v) = &vectors {
                model.load_pretrained(v, &vocab)?;
            }
            let outcome = train(model, &train_set, &dev_set, tc)?;
            let written = save_snapshots(&outcome, &vocab, cfg)?;
            (outcome.report, written)
        }
    };
    let report_path = cfg.out_dir.join("report.csv");
    write_atomic(&report_path, report.to_csv().as_bytes()).map_err(Failure::data)?;

    let mut msg = String::new();
    let _ = writeln!(msg, "stopped after epoch {} ({} mode)", report.stop_epoch, tc.stopping_mode);
    for ((task, epoch), path) in report.best_epochs.iter().zip(&written) {
        let label = task.map_or_else(|| "joint".to_string(), |t| format!("task {t}"));
        let _ = writeln!(msg, "{label}: best epoch {epoch} -> {}", path.display());
    }
    let _ = writeln!(msg, "report: {}", report_path.display());
    say(out, &msg)
}

fn single_task(tasks: cqa_core::TaskSet) -> Result<Task, Failure> {
    let list: Vec<Task> = tasks.iter().collect();
    match list.as_slice() {
        [t] => Ok(*t),
        _ => Err(Failure::usage(anyhow!(
            "model = pair needs exactly one task, got tasks = {tasks}"
        ))),
    }
}

struct Loaded {
    model: AnyModel<f32>,
    vocab: Vocabulary,
    max_len: usize,
}

fn load_model(path: &Path) -> Result<Loaded, Failure> {
    let ck = Checkpoint::read(path)?;
    let model: AnyModel<f32> = ck.restore()?;
    Ok(Loaded {
        model,
        vocab: ck.vocabulary()?,
        max_len: ck.max_len()?,
    })
}

fn resolve_task(model: &AnyModel<f32>, task: Option<Task>) -> Result<Task, Failure> {
    let scored = model.tasks();
    match task {
        Some(t) if scored.contains(t) => Ok(t),
        Some(t) => Err(Failure::usage(anyhow!("the checkpoint does not score task {t} (it scores {scored})"))),
        None => single_task(scored).map_err(|_| Failure::usage(anyhow!("--task is required for a model scoring {scored}"))),
    }
}

fn check_alpha(alpha: Option<f64>) -> CmdResult {
    match alpha {
        Some(a) if !(0.0..=1.0).contains(&a) => Err(Failure::usage(anyhow!("alpha must be in [0, 1], got {a}"))),
        _ => Ok(()),
    }
}

fn examples_for(loaded: &Loaded, triples: &[Triple]) -> Result<Vec<Example>, Failure> {
    if triples.is_empty() {
        return Err(Failure::data(anyhow!("the corpus is empty")));
    }
    Ok(prepare_examples(triples, &loaded.vocab, loaded.max_len)?)
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    corpus: &Path,
    task: Option<Task>,
    alpha: Option<f64>,
    tune_on: Option<&Path>,
    output: &Path,
    out: &mut dyn std::io::Write,
) -> CmdResult {
    check_alpha(alpha)?;
    let loaded = load_model(checkpoint)?;
    let task = resolve_task(&loaded.model, task)?;
    let data = examples_for(&loaded, &load_corpus(corpus)?)?;

    let alpha = match tune_on {
        Some(dev_path) => {
            let dev = examples_for(&loaded, &load_corpus(dev_path)?)?;
            let scores = score_examples(&loaded.model, &dev)?;
            let choice = tune_alpha_candidates(&candidates(&dev, &scores, task)?)?;
            say(out, &format!("alpha={:.2} dev_MAP={:.2}\n", choice.alpha, choice.map))?;
            Some(choice.alpha)
        }
        None => alpha,
    };

    let scores = score_examples(&loaded.model, &data)?;
    let lists = rank_candidates(&candidates(&data, &scores, task)?, alpha)?;
    let result = evaluate_lists(&lists)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &lists, true).map_err(|e| Failure::data(anyhow!(e)))?;
    write_atomic(output, &buf).map_err(Failure::data)?;
    say(
        out,
        &format!(
            "MAP={:.2} MRR={:.2} queries={} skipped={}\n",
            result.map, result.mrr, result.queries, result.skipped
        ),
    )
}

pub fn cmd_predict(checkpoint: &Path, corpus: &Path, task: Option<Task>, alpha: Option<f64>, output: &Path) -> CmdResult {
    check_alpha(alpha)?;
    let loaded = load_model(checkpoint)?;
    let task = resolve_task(&loaded.model, task)?;
    let data = examples_for(&loaded, &load_unlabeled(corpus)?)?;
    let scores = score_examples(&loaded.model, &data)?;
    let lists = rank_candidates(&candidates(&data, &scores, task)?, alpha)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &lists, false).map_err(|e| Failure::data(anyhow!(e)))?;
    write_atomic(output, &buf).map_err(Failure::data)
}

pub fn cmd_gradcheck(
    probes: usize,
    seed: u64,
    feature_maps: usize,
    fault: Option<Fault>,
    out: &mut dyn std::io::Write,
) -> CmdResult {
    if probes == 0 {
        return Err(Failure::usage(anyhow!("probes must be >= 1")));
    }
    let setup = GradCheckSetup {
        seed,
        feature_maps,
        ..Default::default()
    };
    let fault = fault.map(|Fault::Conv| GradientFault::Conv);
    let report = mtl_gradient_check(&setup, probes, fault)?;
    let mut msg = format!(
        "max_relative_error={:.3e} probes={} loss={:.6}\n",
        report.max_relative_error,
        report.probes.len(),
        report.loss
    );
    if let Some(w) = report.worst() {
        let _ = writeln!(
            msg,
            "worst: {}[{}] analytic={:.6e} numeric={:.6e}",
            w.parameter, w.index, w.analytic, w.numeric
        );
    }
    say(out, &msg)?;
    if report.max_relative_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::numeric(anyhow!(
            "gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_relative_error
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_exits_zero_and_bad_usage_exits_one() {
        let mut sink = Vec::new();
        assert_eq!(run(["cqa", "--help"], &mut sink), EXIT_OK);
        assert_eq!(run(["cqa", "frobnicate"], &mut sink), EXIT_USAGE);
        assert_eq!(run(["cqa", "extend"], &mut sink), EXIT_USAGE);
    }

    #[test]
    fn zero_probes_is_a_usage_error() {
        let mut sink = Vec::new();
        let err = cmd_gradcheck(0, 0, 4, None, &mut sink).unwrap_err();
        assert_eq!(err.code, EXIT_USAGE);
        assert_eq!(err.error.to_string(), "probes must be >= 1");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_name(None), "model.ckpt");
        assert_eq!(checkpoint_name(Some(Task::B)), "model_B.ckpt");
    }
}
