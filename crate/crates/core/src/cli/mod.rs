//! Command-line front end: `train`, `predict` and `eval`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

pub mod model_file;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::boost::{train, train_sample_split, EtaSchedule, Mode, TrainConfig};
use crate::dataio::{parse_csv_raw, parse_libsvm_raw, Dataset, LabelColumn, RawData};
use crate::diagnostics::{all_bounds, emit_history, fraction_below, margins, reports_json};
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::loss::{grad_norm_l1, mean_loss, LossKind};

pub use model_file::{from_json, load_model, save_model, to_json, FORMAT_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const EVAL_DELTAS: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Parser)]
#[command(
    name = "resfgb",
    version,
    about = "Residual functional gradient boosting classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it with its learning curve.
    Train(TrainArgs),
    /// Write `index,predicted_label` for every row of a data file.
    Predict(PredictArgs),
    /// Print accuracy, loss, margins and the bound checks on labelled data.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Logistic,
    SmoothHinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Standard,
    SampleSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelColumnArg {
    First,
    Last,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Data file.
    #[arg(long)]
    pub data: PathBuf,
    /// File format; inferred from the extension when omitted (`.csv` is CSV).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Position of the label column in CSV files.
    #[arg(long, value_enum, default_value = "last")]
    pub label_column: LabelColumnArg,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "logistic")]
    pub loss: LossArg,
    /// Layer budget T.
    #[arg(long, default_value_t = 20)]
    pub layers: usize,
    /// Rounds in which the linear head is refitted (default: all).
    #[arg(long)]
    pub t0: Option<usize>,
    /// Learning rate; with --eta2 it applies to the first half of the rounds.
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Learning rate for the second half of the rounds.
    #[arg(long)]
    pub eta2: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Hidden widths of the embedding network.
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub embed_hidden: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub embed_epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub embed_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub embed_momentum: f64,
    /// Embedding mini-batch size.
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    /// Fraction of the data held out for early stopping.
    #[arg(long, default_value_t = 0.0)]
    pub valid_frac: f64,
    /// Rounds without validation improvement before stopping; 0 never stops.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "standard")]
    pub mode: ModeArg,
    #[arg(long)]
    pub no_standardize: bool,
    /// Leave embedding outputs unprojected.
    #[arg(long)]
    pub no_project: bool,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Learning-curve CSV to write.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Predictions CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Print the bound reports as a JSON array instead of lines.
    #[arg(long)]
    pub json: bool,
}

impl TrainArgs {
    pub fn to_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            layers: self.layers,
            t0: self.t0,
            eta: match self.eta2 {
                Some(second) => EtaSchedule::TwoPhase {
                    first: self.eta,
                    second,
                },
                None => EtaSchedule::Constant(self.eta),
            },
            lambda: self.lambda,
            loss: match self.loss {
                LossArg::Logistic => LossKind::Logistic,
                LossArg::SmoothHinge => LossKind::SmoothHinge,
            },
            embed: EmbedConfig {
                hidden: self.embed_hidden.clone(),
                epochs: self.embed_epochs,
                batch_size: self.batch,
                learning_rate: self.embed_lr,
                momentum: self.embed_momentum,
                seed: self.seed,
                project_unit_ball: !self.no_project,
            },
            valid_fraction: self.valid_frac,
            patience: (self.patience > 0).then_some(self.patience),
            seed: self.seed,
            mode: match self.mode {
                ModeArg::Standard => Mode::Standard,
                ModeArg::SampleSplit => Mode::SampleSplit,
            },
            standardize: !self.no_standardize,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DataArgs {
    fn format(&self) -> Format {
        self.format.unwrap_or_else(|| {
            match self
                .data
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase)
                .as_deref()
            {
                Some("csv") => Format::Csv,
                _ => Format::Libsvm,
            }
        })
    }

    fn load(&self, d_hint: Option<usize>) -> Result<RawData> {
        let text = std::fs::read_to_string(&self.data)?;
        match self.format() {
            Format::Libsvm => parse_libsvm_raw(&text, d_hint),
            Format::Csv => parse_csv_raw(
                &text,
                match self.label_column {
                    LabelColumnArg::First => LabelColumn::First,
                    LabelColumnArg::Last => LabelColumn::Last,
                },
            ),
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut io::stdout().lock())
}

/// Like [`run`], with the command's normal output sent to `out`.
pub fn run_with_output<I, T>(args: I, out: &mut dyn io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Train(a) => match a.to_config() {
            Ok(cfg) => cmd_train(a, &cfg, out),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        },
        Command::Predict(a) => cmd_predict(a, out),
        Command::Eval(a) => cmd_eval(a, out),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn io::Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, cfg: &TrainConfig, out: &mut dyn io::Write) -> Result<()> {
    let ds = Dataset::from_raw(args.data.load(None)?)?;
    let (model, history) = match cfg.mode {
        Mode::Standard => train(&ds, cfg)?,
        Mode::SampleSplit => train_sample_split(&ds, cfg)?,
    };
    save_model(&model, &args.out)?;
    if let Some(path) = &args.history {
        emit_history(&history, path)?;
    }
    let chosen = &history.records[history.selected];
    writeln!(
        out,
        "final_train_acc={} final_valid_acc={} rounds={}",
        chosen.train_acc,
        chosen
            .valid_acc
            .map_or_else(|| "NA".to_string(), |a| a.to_string()),
        history.rounds_completed()
    )?;
    Ok(())
}

fn cmd_predict(args: &PredictArgs, sink: &mut dyn io::Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let raw = args.data.load(Some(model.input_dim()))?;
    let logits = model.predict_logits_batch(raw.features.view())?;
    let mut out = String::from("index,predicted_label\n");
    for (i, class) in crate::boost::argmax_rows(logits.view())
        .into_iter()
        .enumerate()
    {
        let _ = writeln!(out, "{i},{}", model.label_values[class]);
    }
    write_output(args.out.as_deref(), &out, sink)
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn io::Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let raw = args.data.load(Some(model.input_dim()))?;
    let ds = Dataset::from_raw_with_labels(raw, &model.label_values)?;
    if ds.d() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {}",
            model.input_dim(),
            ds.d()
        )));
    }
    let logits = model.predict_logits_batch(ds.features())?;
    let labels = ds.labels();
    writeln!(
        out,
        "accuracy={}",
        crate::boost::accuracy(logits.view(), labels)
    )?;
    writeln!(
        out,
        "mean_loss={}",
        mean_loss(model.loss, logits.view(), labels)?
    )?;
    writeln!(
        out,
        "grad_norm_l1={}",
        grad_norm_l1(model.loss, logits.view(), labels)?
    )?;
    let m = margins(logits.view(), labels)?;
    for delta in EVAL_DELTAS {
        writeln!(out, "margin_fraction@{delta}={}", fraction_below(&m, delta))?;
    }
    if model.loss != LossKind::Logistic {
        writeln!(out, "bounds skipped: they are stated for the logistic loss")?;
        return Ok(());
    }
    let reports = all_bounds(
        model.loss,
        logits.view(),
        ds.features(),
        labels,
        &EVAL_DELTAS,
    )?;
    if args.json {
        writeln!(out, "{}", reports_json(&reports)?)?;
    } else {
        for r in &reports {
            writeln!(out, "{r}")?;
        }
    }
    Ok(())
}
