use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use apcjust_cli::{config, pipeline, PipelineError, Stage};

#[derive(Parser)]
#[command(
    name = "apcjust",
    version,
    about = "aPC surrogates, Bayesian model selection and justifiability analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the analysis file without running any model.
    Validate { config: PathBuf },
    /// Build and BaPC-update the surrogates.
    Surrogate { config: PathBuf },
    /// Surrogates plus model evidence and weights per data subset.
    Bms { config: PathBuf },
    /// Surrogates plus confusion matrices and the RMSE table.
    Justify { config: PathBuf },
    /// Every stage, then the plot tables.
    All { config: PathBuf },
    /// Tidy CSV tables for plotting, from an existing output directory.
    ExportPlots { output_dir: PathBuf },
}

fn fail(e: PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (path, stage) = match cli.command {
        Command::Validate { config: path } => {
            return match config::load(&path) {
                Ok(a) => {
                    println!(
                        "{}: ok ({} parameters, {} models, {} observations, {} data subsets)",
                        path.display(),
                        a.space.len(),
                        a.models.len(),
                        a.observations.len(),
                        a.sweeps.iter().map(|s| s.subsets.len()).sum::<usize>()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.into()),
            };
        }
        Command::ExportPlots { output_dir } => {
            return match pipeline::export_plots(&output_dir) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            };
        }
        Command::Surrogate { config } => (config, Stage::Surrogate),
        Command::Bms { config } => (config, Stage::Bms),
        Command::Justify { config } => (config, Stage::Justify),
        Command::All { config } => (config, Stage::All),
    };
    let analysis = match config::load(&path) {
        Ok(a) => a,
        Err(e) => return fail(e.into()),
    };
    match pipeline::run(&analysis, stage) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for m in &summary.models {
                println!(
                    "{}: {} collocation points, mean LOOCV {:.4e}",
                    m.id,
                    m.surrogate.collocation().len(),
                    m.loocv.mean_mse
                );
            }
            println!(
                "{} fresh model runs; artifacts in {}",
                summary.fresh_executions,
                summary.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
