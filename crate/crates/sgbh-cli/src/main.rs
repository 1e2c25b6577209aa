//! `sgbh` — batch driver for the stochastic Burgers–Huxley toolkit.
//!
//!   sgbh run <cfg> [--threads N] [--out DIR]   execute the configured experiment
//!   sgbh validate <cfg>                        constraint report, no compute
//!   sgbh kernel-check [--nu X]                 heat-kernel bound sweep
//!
//! Exit codes: 0 success, 2 config error, 3 numerical error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgbh_cli::config::{ConfigError, RunConfig};
use sgbh_cli::experiments::{run_config, write_diagnostic};
use sgbh_cli::{EXIT_CONFIG, EXIT_NUMERICAL};
use sgbh_core::{default_bound_sweep, verify_kernel_bounds};

/// Environment override for the artifact directory; the `--out` flag wins
/// over it, and the config's own `output_dir` is the fallback. Nothing
/// else is read from the environment.
const OUTPUT_DIR_ENV: &str = "SGBH_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "sgbh", version, about = "Simulation and rare-event toolkit for a stochastic Burgers–Huxley equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in a config file and write its artifacts.
    Run {
        /// Path to a JSON run configuration.
        config: PathBuf,
        /// Worker threads for the Monte-Carlo layers (default: all cores).
        /// Results are byte-identical regardless of this setting.
        #[arg(long)]
        threads: Option<usize>,
        /// Artifact directory, overriding the config and SGBH_OUTPUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config against every constraint without computing anything.
    Validate {
        /// Path to a JSON run configuration.
        config: PathBuf,
    },
    /// Sweep the closed-form heat-kernel bounds and report the constants.
    KernelCheck {
        /// Viscosity for the sweep.
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, threads, out } => cmd_run(&config, threads, out),
        Command::Validate { config } => cmd_validate(&config),
        Command::KernelCheck { nu } => cmd_kernel_check(nu),
    };
    ExitCode::from(code)
}

/// Print to stdout, tolerating a closed pipe: `sgbh ... | head` must end
/// with the intended exit code, not a write panic.
fn emit(body: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{body}");
}

fn cmd_run(config_path: &Path, threads: Option<usize>, out_flag: Option<PathBuf>) -> u8 {
    let (cfg, raw) = match RunConfig::load(config_path) {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };

    let report = cfg.validate();
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.valid {
        eprintln!("{}", ConfigError::Invalid { violations: report.violations });
        return EXIT_CONFIG;
    }

    if let Some(n) = threads {
        if n == 0 {
            eprintln!("--threads must be at least 1");
            return EXIT_CONFIG;
        }
        // Build the global pool up front so every parallel section below
        // uses exactly the requested width.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot size the worker pool: {e}");
            return EXIT_CONFIG;
        }
    }

    let out_dir = out_flag
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone());
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create output directory {}: {e}", out_dir.display());
        return EXIT_CONFIG;
    }

    match run_config(&cfg, &raw, &out_dir) {
        Ok(manifest) => {
            emit(&format!(
                "experiment {}: {} artifacts in {} ({:.3} s)",
                cfg.experiment.name(),
                manifest.artifacts.len(),
                out_dir.display(),
                manifest.wall_time_secs
            ));
            for name in &manifest.artifacts {
                emit(&format!("  {name}"));
            }
            0
        }
        Err(e) => {
            if let Err(io) = write_diagnostic(&out_dir, &e) {
                eprintln!("{io}");
            }
            eprintln!("{e}");
            EXIT_NUMERICAL
        }
    }
}

/// Validation never exits nonzero on a merely invalid config: the report
/// itself carries the verdict, so scripted callers read the JSON. Only an
/// unreadable or unparseable file is a hard (exit 2) failure.
fn cmd_validate(config_path: &Path) -> u8 {
    let (cfg, _raw) = match RunConfig::load(config_path) {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let report = cfg.validate();
    match serde_json::to_string_pretty(&report) {
        Ok(body) => {
            emit(&body);
            0
        }
        Err(e) => {
            eprintln!("cannot serialize the validation report: {e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_kernel_check(nu: f64) -> u8 {
    if !(nu > 0.0 && nu.is_finite()) {
        eprintln!("--nu must be positive and finite, got {nu}");
        return EXIT_CONFIG;
    }
    let (t_samples, xy_samples) = default_bound_sweep();
    let report = verify_kernel_bounds(&t_samples, &xy_samples, nu);
    match serde_json::to_string_pretty(&report) {
        Ok(body) => emit(&body),
        Err(e) => {
            eprintln!("cannot serialize the bound report: {e}");
            return EXIT_CONFIG;
        }
    }
    if report.all_pass() {
        0
    } else {
        EXIT_NUMERICAL
    }
}
