//! `somspike` subcommands. Exit codes: 0 success, 1 failed check, 2 bad
//! input or usage.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use somspike_core::data::{stratified_split, SplitRatios, Subset};
use somspike_core::gradcheck::{
    check_backbone, check_model, check_smoothed_ce, check_spikehead, check_ssol, GradReport,
};
use somspike_core::metrics::{paired_ttest, ClassReport};
use somspike_core::network::Variant;
use somspike_core::softsom::GradientMode;
use somspike_core::Mode;

use crate::blobs::{gaussian_blobs, BlobSpec};
use crate::checkpoint::load_checkpoint;
use crate::config::RunConfigFile;
use crate::store::{load_feature_store, load_split, save_split, write_feature_store};
use crate::trainer::{ablate, evaluate, read_series, train, write_ablation_csv, write_confusion_csv, write_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "somspike", version, about = "Soft-SOM spiking classifier toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Ssol,
    Spikehead,
    Backbone,
    Ce,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SubsetArg {
    Train,
    Val,
    Test,
}

impl From<SubsetArg> for Subset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::Train => Subset::Train,
            SubsetArg::Val => Subset::Val,
            SubsetArg::Test => Subset::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified 70/15/15 split of a feature store.
    Split {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one subset; prints a class report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        subset: SubsetArg,
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
    },
    /// Train all four variants and write `variant,test_accuracy` rows.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-tailed paired t-test of series B against series A.
    Ttest {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Finite-difference gradient check of one component.
    Gradcheck {
        #[arg(long, value_enum)]
        component: Component,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded Gaussian-blob feature store.
    MakeBlobs {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
    },
}

enum Failure {
    Check(String),
    Input(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<somspike_core::Error> for Failure {
    fn from(e: somspike_core::Error) -> Self {
        Failure::Input(e.into())
    }
}

impl From<crate::IoError> for Failure {
    fn from(e: crate::IoError) -> Self {
        Failure::Input(e.into())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_BAD_INPUT;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(Failure::Check(msg)) => {
            let _ = writeln!(err, "check failed: {msg}");
            EXIT_CHECK_FAILED
        }
        Err(Failure::Input(e)) => {
            let _ = writeln!(err, "error: {}", render_chain(&e));
            EXIT_BAD_INPUT
        }
    }
}

/// Joins the cause chain, dropping causes whose text a wrapper already shows.
fn render_chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn print_json(out: &mut dyn Write, value: &impl serde::Serialize) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Split { store, seed, out: path } => {
            let store = load_feature_store(&store).context("loading store")?;
            let c = store.num_classes();
            let split = stratified_split(store.labels(), c, SplitRatios::default(), seed)?;
            save_split(&path, &split)?;
            let counts = split.per_class_counts(store.labels(), c);
            writeln!(out, "{:<16} {:>7} {:>7} {:>7}", "class", "train", "val", "test").context("stdout")?;
            let mut totals = [0usize; 3];
            for (name, row) in store.manifest().class_names.iter().zip(&counts) {
                writeln!(out, "{name:<16} {:>7} {:>7} {:>7}", row[0], row[1], row[2]).context("stdout")?;
                for k in 0..3 {
                    totals[k] += row[k];
                }
            }
            writeln!(out, "{:<16} {:>7} {:>7} {:>7}", "total", totals[0], totals[1], totals[2]).context("stdout")?;
        }
        Command::Train {
            config,
            seed,
            max_epochs,
            checkpoint,
            report,
        } => {
            let mut run = RunConfigFile::load(&config)?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(e) = max_epochs {
                run.train.max_epochs = e;
            }
            if checkpoint.is_some() {
                run.train.checkpoint = checkpoint;
            }
            if report.is_some() {
                run.report = report;
            }
            if run.train.checkpoint.is_none() {
                let dir = config.parent().unwrap_or(std::path::Path::new(""));
                run.train.checkpoint = Some(dir.join("best.ckpt"));
            }
            run.train.validate()?;
            let store = load_feature_store(&run.store).context("loading store")?;
            let split = run.split.as_ref().map(|p| load_split(p, store.len())).transpose()?;
            let report = train(&run.train, &store, split.as_ref())?;
            for e in &report.epochs {
                writeln!(
                    err,
                    "epoch {:>3}  loss {:.5}  val {:7.3}%  lr {:.3e}{}",
                    e.epoch,
                    e.train_loss,
                    e.val_accuracy,
                    e.learning_rate,
                    if e.checkpoint_saved { "  saved" } else { "" }
                )
                .context("stderr")?;
            }
            match &run.report {
                Some(path) => write_json(path, &report)?,
                None => print_json(out, &report)?,
            }
        }
        Command::Eval {
            checkpoint,
            store,
            split,
            subset,
            confusion_csv,
        } => {
            let (model, _) = load_checkpoint(&checkpoint, None)?;
            let store = load_feature_store(&store).context("loading store")?;
            let split = load_split(&split, store.len())?;
            let eval = evaluate(&model, &store, &split.indices(subset.into()))?;
            if let Some(path) = confusion_csv {
                write_confusion_csv(&path, &eval.confusion)?;
            }
            print_json(out, &ClassReport::from_confusion(&eval.confusion)?)?;
        }
        Command::Ablate { config, seed, out: path } => {
            let mut run = RunConfigFile::load(&config)?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            let store = load_feature_store(&run.store).context("loading store")?;
            let split = run.split.as_ref().map(|p| load_split(p, store.len())).transpose()?;
            let rows = ablate(&run.train, &store, split.as_ref())?;
            let path = path
                .or(run.ablation_csv)
                .unwrap_or_else(|| config.with_file_name("ablation.csv"));
            write_ablation_csv(&path, &rows)?;
            writeln!(out, "variant,test_accuracy").context("stdout")?;
            for row in rows {
                writeln!(out, "{},{}", row.variant, row.test_accuracy).context("stdout")?;
            }
        }
        Command::Ttest { a, b } => {
            let a = read_series(&a)?;
            let b = read_series(&b)?;
            let r = paired_ttest(&a, &b)?;
            print_json(out, &json!({ "t": r.t, "df": r.df, "p": r.p }))?;
        }
        Command::Gradcheck { component, seed } => {
            let (report, threshold) = gradcheck(component, seed)?;
            print_json(
                out,
                &json!({
                    "component": format!("{component:?}").to_lowercase(),
                    "seed": seed,
                    "max_relative_error": report.max_relative_error,
                    "worst": report.worst,
                    "entries": report.entries,
                    "threshold": threshold,
                }),
            )?;
            if !report.passes(threshold) {
                return Err(Failure::Check(format!(
                    "max relative error {:e} >= {threshold:e} at {}",
                    report.max_relative_error, report.worst
                )));
            }
        }
        Command::MakeBlobs {
            out: dir,
            seed,
            classes,
            dim,
            per_class,
        } => {
            let spec = BlobSpec {
                classes,
                dim,
                per_class,
                ..BlobSpec::default()
            };
            let store = gaussian_blobs(spec, seed)?;
            write_feature_store(&dir, &store)?;
            writeln!(out, "wrote {} records of width {} to {}", store.len(), dim, dir.display()).context("stdout")?;
        }
    }
    Ok(())
}

/// Runs one component's check; returns the report and its pass threshold.
pub fn gradcheck(component: Component, seed: u64) -> somspike_core::Result<(GradReport, f64)> {
    Ok(match component {
        Component::Ssol => (
            check_ssol(seed, GradientMode::FullJacobian, false)?
                .merge(check_ssol(seed, GradientMode::FullJacobian, true)?),
            1e-6,
        ),
        Component::Spikehead => (
            check_spikehead(seed, Mode::Train)?.merge(check_spikehead(seed, Mode::Eval)?),
            1e-5,
        ),
        Component::Backbone => (check_backbone(seed)?, 1e-5),
        Component::Ce => (check_smoothed_ce(seed)?, 1e-7),
        Component::Full => {
            let mut report = GradReport::default();
            for variant in Variant::ALL {
                for mode in [Mode::Train, Mode::Eval] {
                    report = report.merge(check_model(seed, variant, mode)?);
                }
            }
            (report, 1e-5)
        }
    })
}
