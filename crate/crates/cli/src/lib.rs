//! Command-line front end of the pcsim toolkit.
//!
//! Every experiment is described by a TOML config file; see [`config`] for
//! the schema. Results go to an output directory together with a manifest
//! listing the sha256 of every file.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod execute;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentKind, Overrides, ValidatedConfig};
use error::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "PCSIM_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "pcsim",
    version,
    about = "Photonic-crystal cavity emission simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cavity resonance: wavelength, Q, mode volume and field profile
    Resonance(RunArgs),
    /// Purcell factor, decay rate and detuning curve from mode figures
    Purcell(RunArgs),
    /// Emission-rate change of one dipole emitter
    SingleRate(RunArgs),
    /// Seeded random ensemble of emitters
    Ensemble(RunArgs),
    /// Rate over emitter offset and detuning from the cavity
    RateMap(RunArgs),
    /// Suppression spectrum and band-gap edges of a defect-free crystal
    Bandgap(RunArgs),
    /// Photon streams, coincidence histogram, g2(0) and lifetime fit
    PhotonStats(RunArgs),
    /// Check a config and print its canonical form
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config `output_dir`, else $PCSIM_OUT/<experiment>-<hash>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed overriding the config value (0 to 2^63 - 1, the TOML integer range)
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Print the manifest of planned outputs without running
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
}

fn output_dir(cfg: &ValidatedConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.config.output_dir.clone())
        .unwrap_or_else(|| {
            let root = std::env::var_os(OUTPUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("pcsim-out"));
            root.join(format!("{}-{}", cfg.kind, &cfg.hash[..12]))
        })
}

fn run_experiment(kind: ExperimentKind, args: RunArgs) -> Result<(), CliError> {
    let overrides = Overrides {
        experiment: Some(kind),
        seed: args.seed,
    };
    let cfg = config::load(&args.config, &overrides)?;
    if args.dry_run {
        let m = execute::dry_run(&cfg)?;
        println!(
            "{}",
            serde_json::to_string_pretty(&m).map_err(pcsim_core::Error::from)?
        );
        return Ok(());
    }
    let out = output_dir(&cfg, args.out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    eprintln!(
        "pcsim: {} (config {}) -> {}",
        kind,
        &cfg.hash[..12],
        out.display()
    );
    let m = pool.install(|| execute::execute(&cfg, &out))?;
    eprintln!(
        "pcsim: wrote {} files in {:.1} s",
        m.files.len() + 1,
        m.wall_time_s
    );
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let overrides = Overrides {
        experiment: None,
        seed: args.seed,
    };
    let cfg = config::load(&args.config, &overrides)?;
    print!("{}", cfg.canonical);
    eprintln!("pcsim: config hash {}", cfg.hash);
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 1 on runtime failure, 2 on usage or configuration errors.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Resonance(a) => run_experiment(ExperimentKind::Resonance, a),
        Command::Purcell(a) => run_experiment(ExperimentKind::Purcell, a),
        Command::SingleRate(a) => run_experiment(ExperimentKind::SingleRate, a),
        Command::Ensemble(a) => run_experiment(ExperimentKind::Ensemble, a),
        Command::RateMap(a) => run_experiment(ExperimentKind::RateMap, a),
        Command::Bandgap(a) => run_experiment(ExperimentKind::Bandgap, a),
        Command::PhotonStats(a) => run_experiment(ExperimentKind::PhotonStats, a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pcsim: {e}");
            e.exit_code()
        }
    }
}
