//! `irx`: batch front end for ingesting rasters, training IRX-1D and 2-D CNN
//! models, scoring and mapping, and hyperparameter search.
//!
//! Exit status: 0 success, 1 failure, 2 bad invocation, 3 parameter audit
//! matched a documented anomaly.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands::{
    ClassifyArgs, ConvertArgs, DiffArgs, EvaluateArgs, HpoArgs, ParamsArgs, Run, SplitArgs, SweepFractionArgs,
    SweepPatchArgs, SynthArgs, TrainArgs,
};
use crate::config::Usage;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ANOMALY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "irx", version, about = "Patch-based classification of multiband rasters with IRX-1D")]
struct Cli {
    /// Worker threads; 1 gives bit-exact repeatability.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// key=value file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// off, error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info", value_name = "LEVEL")]
    log: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// ENVI header and raw file to a canonical cube.
    Convert(ConvertArgs),
    /// Seeded synthetic scene and ground truth.
    Synth(SynthArgs),
    /// Stratified train/test split of a label raster.
    Split(SplitArgs),
    /// Train a model and write checkpoint, history and experiment log.
    Train(TrainArgs),
    /// Per-layer parameter audit.
    Params(ParamsArgs),
    /// Score a checkpoint on the test pixels.
    Evaluate(EvaluateArgs),
    /// Classify every pixel and render the map.
    Classify(ClassifyArgs),
    /// Disagreement between two label maps.
    DiffMaps(DiffArgs),
    /// Test accuracy against training fraction.
    SweepFraction(SweepFractionArgs),
    /// Test accuracy against patch size.
    SweepPatch(SweepPatchArgs),
    /// Gaussian-process search over 2-D CNN configurations.
    Hpo(HpoArgs),
}

fn run(cli: Cli, ctx: Run) -> anyhow::Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Convert(a) => commands::convert(&a, &ctx),
        Command::Synth(a) => commands::synth(&a, &ctx),
        Command::Split(a) => commands::split(&a, &ctx),
        Command::Train(a) => commands::train(&a, &ctx),
        Command::Params(a) => commands::params(&a),
        Command::Evaluate(a) => commands::evaluate(&a, &ctx),
        Command::Classify(a) => commands::classify(&a, &ctx),
        Command::DiffMaps(a) => commands::diff_maps(&a, &ctx),
        Command::SweepFraction(a) => commands::sweep_fraction(&a, &ctx),
        Command::SweepPatch(a) => commands::sweep_patch(&a, &ctx),
        Command::Hpo(a) => commands::hpo(&a, &ctx),
    }
}

fn main() -> ExitCode {
    let cmd = Cli::command();
    let argv: Vec<String> = std::env::args().collect();
    let parsed = config::merge(&cmd, argv)
        .map_err(anyhow::Error::from)
        .and_then(|args| {
            let m = cmd.clone().try_get_matches_from(args)?;
            let cli = Cli::from_arg_matches(&m)?;
            let (name, sub_m) = m.subcommand().expect("subcommand is required");
            let sub = cmd.find_subcommand(name).expect("matched subcommand exists");
            let ctx = Run {
                command: name.to_string(),
                args: config::resolved_args(sub, sub_m),
            };
            Ok((cli, ctx))
        });
    let (cli, ctx) = match parsed {
        Ok(v) => v,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                if matches!(ce.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                    let _ = ce.print();
                    return ExitCode::SUCCESS;
                }
                let text = ce.render().to_string();
                eprintln!("{}", text.lines().next().unwrap_or("error: bad arguments"));
            } else {
                eprintln!("error: {e:#}");
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log)
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .init();
    match run(cli, ctx) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }
}
