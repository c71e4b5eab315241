use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vortex_lab_cli::config::parse_config;
use vortex_lab_cli::report::{calibrate_corpus, check_run, write_report};
use vortex_lab_cli::scenario::{run_scenario, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_PASS};

#[derive(Parser)]
#[command(name = "vortex-lab", version, about = "Density-patch scenario runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario described by a TOML file.
    Run {
        config: PathBuf,
        /// Output root; falls back to $VORTEX_LAB_OUT, then the working directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate one estimate on a finished run directory.
    Check {
        run_dir: PathBuf,
        estimate: String,
        #[arg(long)]
        constant: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        rel_tol: f64,
    },
    /// Summarize a run directory, optionally against another one.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Fit estimate constants over a directory of runs.
    Calibrate {
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn output_root(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os("VORTEX_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run_dir_name(config: &Path, directory: Option<&str>) -> PathBuf {
    match directory {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from(config.file_stem().unwrap_or_default()),
    }
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, out } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return code(EXIT_CONFIG);
                }
            };
            let dir = output_root(out).join(run_dir_name(&config, cfg.output.directory.as_deref()));
            match run_scenario(&cfg, &dir) {
                Ok(status) => {
                    match &status.failure {
                        Some(f) => eprintln!("run stopped: {f}"),
                        None => println!("{}: {} snapshots", dir.display(), status.snapshots),
                    }
                    code(status.exit_code)
                }
                Err(e) => {
                    eprintln!("{e}");
                    code(EXIT_DIVERGENCE)
                }
            }
        }
        Cmd::Check {
            run_dir,
            estimate,
            constant,
            rel_tol,
        } => match check_run(&run_dir, &estimate, constant, rel_tol) {
            Ok(o) => {
                println!("{}", serde_json::to_string_pretty(&o).expect("outcome serializes"));
                code(if o.passed == Some(false) { EXIT_CHECK_FAILED } else { EXIT_PASS })
            }
            Err(e) => {
                eprintln!("{e}");
                code(EXIT_CONFIG)
            }
        },
        Cmd::Report { run_dir, compare } => match write_report(&run_dir, compare.as_deref()) {
            Ok(rows) => {
                println!("{} summary rows", rows.len());
                code(EXIT_PASS)
            }
            Err(e) => {
                eprintln!("{e}");
                code(EXIT_CHECK_FAILED)
            }
        },
        Cmd::Calibrate { corpus, seed } => match calibrate_corpus(&corpus, seed) {
            Ok(fits) => {
                for f in &fits {
                    let held = f.held_out.map_or(0, |h| h.violations);
                    println!("{}: C = {:e} ({} held-out violations)", f.id, f.constant, held);
                }
                code(if fits.iter().all(|f| f.passes()) { EXIT_PASS } else { EXIT_CHECK_FAILED })
            }
            Err(e) => {
                eprintln!("{e}");
                code(EXIT_CHECK_FAILED)
            }
        },
    }
}
