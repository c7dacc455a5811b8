use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use secrate::experiment::{
    self, output_format, render_bounds, to_json, trace_csv, write_file, ExperimentConfig, ExperimentError,
};

/// Delay-limited secrecy rates over block-fading wiretap channels.
#[derive(Debug, Parser)]
#[command(name = "secrate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Upper and lower bounds over the configured SNR grid.
    Bounds(Common),
    /// Key-renewal protocol simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Per-block trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// High-SNR limit of the secrecy rate.
    Highsnr(Common),
    /// Main-CSI fixed-point rate over the SNR grid.
    Fixedpoint(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output file; format follows the extension (.csv or .json). Defaults to
    /// the config's `output.path`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(path: Option<&Path>, contents: &str) -> Result<(), ExperimentError> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn bounds_like(
    common: &Common,
    run: fn(&ExperimentConfig) -> Result<Vec<secrate::bounds::BoundResult>, ExperimentError>,
) -> Result<(), ExperimentError> {
    let config = ExperimentConfig::load(&common.config)?;
    let out = common.out.clone().or_else(|| config.output.as_ref().map(|o| o.path.clone()));
    let explicit = if common.out.is_some() { None } else { config.output.as_ref().and_then(|o| o.format) };
    let rows = run(&config)?;
    emit(out.as_deref(), &render_bounds(&rows, output_format(out.as_deref(), explicit)))
}

fn trace_path(base: &Path, b_count: usize, multiple: bool) -> PathBuf {
    if !multiple {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_b{b_count}.{ext}"),
        None => format!("{stem}_b{b_count}"),
    };
    base.with_file_name(name)
}

fn simulate(common: &Common, trace: Option<&Path>) -> Result<(), ExperimentError> {
    let config = ExperimentConfig::load(&common.config)?;
    let out = common.out.clone().or_else(|| config.output.as_ref().map(|o| o.path.clone()));
    let runs = experiment::run_sim(&config)?;
    let multiple = runs.len() > 1;
    if let Some(base) = trace {
        for (report, rows) in &runs {
            write_file(&trace_path(base, report.b_count, multiple), &trace_csv(rows))?;
        }
    }
    let reports: Vec<_> = runs.into_iter().map(|(r, _)| r).collect();
    let json = if multiple { to_json(&reports) } else { to_json(&reports[0]) };
    emit(out.as_deref(), &json)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Bounds(c) => bounds_like(c, experiment::run_sweep),
        Command::Highsnr(c) => bounds_like(c, experiment::run_highsnr),
        Command::Fixedpoint(c) => bounds_like(c, experiment::run_fixedpoint),
        Command::Simulate { common, trace } => simulate(common, trace.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("secrate: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
