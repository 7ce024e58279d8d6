//! Argument parsing and exit codes: 0 on any declared termination, 1 on
//! numerical or I/O failure, 2 on usage errors.

use crate::checks::{format_table, run_checks};
use crate::config::{DirectionName, InitName, PartialConfig, Problem, RunConfig};
use crate::run::{solve, sweep};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sgflow",
    version,
    about = "Sobolev-gradient and Levenberg-Marquardt descent flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one flow and write its artifacts.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        h0: Option<f64>,
    },
    /// Run one GL flow per applied field value.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated applied field values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        h0: Vec<f64>,
    },
    /// Run the oracle battery.
    Check {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        /// List check names and exit.
        #[arg(long)]
        list: bool,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    problem: Option<Problem>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    lx: Option<f64>,
    #[arg(long)]
    ly: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, value_enum)]
    init: Option<InitName>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u32>,
    #[arg(long, value_enum)]
    direction: Option<DirectionName>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda_floor: Option<f64>,
    #[arg(long)]
    lambda_ceiling: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    stall_tol: Option<f64>,
    /// `ρ` for Gauss-Newton directions.
    #[arg(long)]
    regularization: Option<f64>,
    #[arg(long)]
    cg_max_iter: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self, h0: Option<f64>) -> Result<RunConfig, String> {
        let file = match &self.config {
            Some(path) => PartialConfig::from_file(path).map_err(|e| e.to_string())?,
            None => PartialConfig::default(),
        };
        let flags = PartialConfig {
            problem: self.problem,
            nx: self.nx,
            ny: self.ny,
            lx: self.lx,
            ly: self.ly,
            kappa: self.kappa,
            h0,
            init: self.init,
            noise: self.noise,
            seed: self.seed,
            direction: self.direction,
            lambda0: self.lambda0,
            lambda_floor: self.lambda_floor,
            lambda_ceiling: self.lambda_ceiling,
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            stall_tol: self.stall_tol,
            regularization: self.regularization,
            cg_max_iter: self.cg_max_iter,
            out: self.out,
            ..PartialConfig::default()
        };
        RunConfig::resolve(file.merge(flags)).map_err(|e| e.to_string())
    }
}

fn usage(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Solve { run, h0 } => {
            let cfg = match run.resolve(h0) {
                Ok(c) => c,
                Err(e) => return usage(&e),
            };
            match solve(&cfg) {
                Ok(m) => {
                    println!(
                        "{}: {} after {} iterations ({} accepted), E = {:.6e}",
                        cfg.out.display(),
                        m.termination,
                        m.iterations,
                        m.accepted,
                        m.final_energy
                    );
                    if let Some(v) = &m.vortices {
                        println!("vortices: {} (total winding {})", v.count, v.total_winding);
                    }
                    match &m.failure {
                        Some(reason) => {
                            eprintln!("error: {reason}");
                            EXIT_FAILURE
                        }
                        None => EXIT_OK,
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    EXIT_FAILURE
                }
            }
        }
        Command::Sweep { run, h0 } => {
            let base = match run.resolve(h0.first().copied()) {
                Ok(c) => c,
                Err(e) => return usage(&e),
            };
            if base.problem != Problem::Gl {
                return usage("sweep requires --problem gl");
            }
            if let Err(e) = crate::run::thread_limit() {
                return usage(&e.to_string());
            }
            match sweep(&base, &h0) {
                Ok(runs) => {
                    for r in &runs {
                        match &r.outcome {
                            Ok(m) => println!(
                                "h0 = {}: {} after {} iterations, E = {:.6e}, vortices {}",
                                r.h0,
                                m.failure.as_deref().unwrap_or(&m.termination),
                                m.iterations,
                                m.final_energy,
                                m.vortices.as_ref().map_or(0, |v| v.count)
                            ),
                            Err(e) => println!("h0 = {}: error: {e}", r.h0),
                        }
                    }
                    if runs.iter().any(|r| r.succeeded()) {
                        EXIT_OK
                    } else {
                        EXIT_FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    EXIT_FAILURE
                }
            }
        }
        Command::Check {
            filter,
            list,
            inject_fault,
        } => {
            if list {
                for name in crate::checks::check_names() {
                    println!("{name}");
                }
                return EXIT_OK;
            }
            let results = run_checks(filter.as_deref(), inject_fault);
            if results.is_empty() {
                return usage("no check matches the filter");
            }
            print!("{}", format_table(&results));
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name)
                .collect();
            if failed.is_empty() {
                EXIT_OK
            } else {
                eprintln!("failed: {}", failed.join(", "));
                EXIT_FAILURE
            }
        }
    }
}
