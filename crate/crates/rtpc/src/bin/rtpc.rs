//! `rtpc` command line: batch post-processing for real-time phase-contrast
//! velocity series (ingest, simulate, run, plot, export).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rtpc::cli::{cmd_export, cmd_ingest, cmd_plot, cmd_run, cmd_simulate, CliError};
use rtpc::dicom::IngestConfig;

#[derive(Parser)]
#[command(name = "rtpc", version, about = "Real-time phase-contrast flow post-processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a DICOM series to the portable .rtp format
    Ingest(IngestArgs),
    /// Generate a synthetic phantom dataset with ground truth
    Simulate(SimulateArgs),
    /// Run the processing pipeline on one dataset or a batch
    Run(RunArgs),
    /// Render SVG charts from previously produced CSV artifacts
    Plot(PlotArgs),
    /// Merge results.tsv files from several runs
    Export(ExportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// DICOM file, directory, or DICOMDIR
    input: PathBuf,
    /// Optional ingest configuration (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output .rtp path
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Phantom configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// File listing one input path per line; each becomes a dataset
    #[arg(long)]
    batch: Option<PathBuf>,
    /// Override the configured output directory
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for batch processing
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the region-growing seed, e.g. "32,40"
    #[arg(long, value_name = "row,col")]
    seed_override: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// flow.csv produced by `run`
    flow_csv: PathBuf,
    /// Optional respiratory belt CSV to overlay
    #[arg(long)]
    resp: Option<PathBuf>,
    /// Optional diff_curves.csv to chart per parameter
    #[arg(long)]
    diff: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// results.tsv files to merge
    inputs: Vec<PathBuf>,
    /// Merged output path
    #[arg(long)]
    output: PathBuf,
}

fn parse_seed(text: &str) -> Result<(usize, usize), CliError> {
    let mut parts = text.split(',');
    let parse = |s: Option<&str>| {
        s.and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| CliError::Config(format!("invalid --seed-override '{text}', expected row,col")))
    };
    let row = parse(parts.next())?;
    let col = parse(parts.next())?;
    if parts.next().is_some() {
        return Err(CliError::Config(format!(
            "invalid --seed-override '{text}', expected row,col"
        )));
    }
    Ok((row, col))
}

fn run() -> Result<usize, CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(args) => {
            let config = match args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    serde_json::from_str::<IngestConfig>(&text)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                }
                None => IngestConfig::default(),
            };
            cmd_ingest(&args.input, &config, &args.output)?;
            Ok(0)
        }
        Command::Simulate(args) => {
            cmd_simulate(&args.config, &args.output)?;
            Ok(0)
        }
        Command::Run(args) => {
            let seed = args.seed_override.as_deref().map(parse_seed).transpose()?;
            cmd_run(
                &args.config,
                args.batch.as_deref(),
                args.output.as_deref(),
                args.jobs,
                seed,
            )
        }
        Command::Plot(args) => {
            cmd_plot(
                &args.flow_csv,
                args.resp.as_deref(),
                args.diff.as_deref(),
                &args.output,
            )?;
            Ok(0)
        }
        Command::Export(args) => {
            if args.inputs.is_empty() {
                return Err(CliError::Config("no input files to merge".to_string()));
            }
            cmd_export(&args.inputs, &args.output)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("RTPC_LOG")).init();
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_failures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
