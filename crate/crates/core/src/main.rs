//! Command-line pipelines: build instruction-tuning data, dump
//! segmentations, run classification and ranking inference, evaluate, and
//! inspect single prompts.
//!
//! Exit codes: 0 success, 1 data error, 2 backend error.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tablekit::config::{ConfigFile, PipelineConfig};
use tablekit::error::{Error, Result};
use tablekit::pipeline;
use tablekit::table::TaskKind;

#[derive(Parser)]
#[command(
    name = "tablekit",
    version,
    about = "Table-task prompt builder and orchestrator"
)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed; required here or in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Tables JSONL path.
    #[arg(long, global = true)]
    tables: Option<PathBuf>,

    /// Instances JSONL path.
    #[arg(long, global = true)]
    instances: Option<PathBuf>,

    /// Label-space file for a task, as task-id=path; repeatable.
    #[arg(long = "labels", value_name = "TASK=PATH", global = true)]
    labels: Vec<String>,

    /// Output path; stdout when omitted.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build instruction-tuning records from tables and instances.
    Build,
    /// Dump the subtable segmentation for one task's budget.
    Segment {
        /// Task whose budget governs the segmentation.
        #[arg(long)]
        task: String,
        /// Explicit allowed subtable length, overriding the budget.
        #[arg(long)]
        allowed: Option<usize>,
    },
    /// Run divide-and-merge classification and write predictions.
    Classify,
    /// Rank candidate pools from a JSONL stream.
    Rank {
        /// Input JSONL with instance_id and candidates fields.
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate predictions (from a file or the configured backend).
    Eval {
        /// Predictions JSONL; omitted means the backend produces them.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Also write the plain-text report table to this path.
        #[arg(long)]
        text_report: Option<PathBuf>,
    },
    /// Pretty-print one assembled prompt.
    Inspect {
        /// Instance id or 0-based ordinal.
        #[arg(long)]
        instance: String,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(tables) = &cli.tables {
        file.tables = Some(tables.clone());
    }
    if let Some(instances) = &cli.instances {
        file.instances = Some(instances.clone());
    }
    if let Some(output) = &cli.output {
        file.output = Some(output.clone());
    }
    for entry in &cli.labels {
        let (task, path) = entry.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--labels expects task-id=path, got {entry:?}"))
        })?;
        file.labels.insert(task.to_string(), PathBuf::from(path));
    }
    PipelineConfig::resolve(file, cli.seed)
}

fn open_output(cfg: &PipelineConfig) -> Result<Box<dyn Write>> {
    match &cfg.output {
        Some(path) => Ok(Box::new(BufWriter::new(File::create(path)?))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Build => {
            let summary = pipeline::cmd_build(&cfg, open_output(&cfg)?)?;
            for warning in &summary.warnings {
                eprintln!("warning: {warning}");
            }
            eprintln!(
                "built {} records from {} instances",
                summary.records, summary.instances
            );
        }
        Command::Segment { task, allowed } => {
            let task = TaskKind::from_id(task)?;
            let count = pipeline::cmd_segment(&cfg, task, *allowed, open_output(&cfg)?)?;
            eprintln!("wrote {count} subtables");
        }
        Command::Classify => {
            let count = pipeline::cmd_classify(&cfg, open_output(&cfg)?)?;
            eprintln!("classified {count} instances");
        }
        Command::Rank { input } => {
            let reader = BufReader::new(File::open(input)?);
            let count = pipeline::cmd_rank(&cfg, reader, open_output(&cfg)?)?;
            eprintln!("ranked {count} candidate pools");
        }
        Command::Eval {
            predictions,
            text_report,
        } => {
            let report = pipeline::cmd_eval(&cfg, predictions.as_deref())?;
            let mut out = open_output(&cfg)?;
            out.write_all(report.to_json().as_bytes())?;
            out.write_all(b"\n")?;
            let table = report.to_table();
            if let Some(path) = text_report {
                std::fs::write(path, &table)?;
            }
            eprintln!("{table}");
        }
        Command::Inspect { instance } => {
            let text = pipeline::cmd_inspect(&cfg, instance)?;
            let mut out = open_output(&cfg)?;
            out.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_backend() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
