use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use catsim::prng::PrngKind;
use catsim_cli::commands::{
    cmd_gen_trace, cmd_reliability, cmd_run, cmd_thresholds, reliability_files, GenTraceArgs,
    ReliabilityArgs, RunArgs, ThresholdArgs, TraceOutFormat,
};
use catsim_cli::config::OutputFormat;
use catsim_cli::output::{to_json, write_all};
use catsim_cli::{CliError, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "catsim", version, about = "Row-hammer mitigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrngArg {
    Quality,
    Lfsr,
}

#[derive(Subcommand)]
enum Command {
    /// Run the schemes of a TOML config (or a previous manifest.json) on one trace.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
    /// Unsurvivability over a (p, T, Q0) grid.
    Reliability {
        #[arg(long, value_delimiter = ',', default_value = "0.002")]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "32768")]
        t: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "40")]
        q0: Vec<f64>,
        #[arg(long, default_value_t = 5.0)]
        years: f64,
        #[arg(long, value_enum, default_value = "quality")]
        prng: PrngArg,
        /// Monte Carlo trials per point (0 = analytic only).
        #[arg(long, default_value_t = 0)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        intervals: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write files here instead of printing to stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
    },
    /// Split thresholds for (M, L, T) and where they come from.
    Thresholds {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        l: u32,
        #[arg(long)]
        t: u32,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Also print the heuristic values.
        #[arg(long)]
        compare: bool,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
    /// Write the workload of a config as a trace file.
    GenTrace {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        trace_format: TraceOutFormat,
    },
}

fn stdout(bytes: &[u8]) -> Result<()> {
    std::io::stdout()
        .write_all(bytes)
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            seed,
            out_dir,
            format,
        } => {
            let out = cmd_run(&RunArgs {
                config,
                seed,
                out_dir,
                format,
            })?;
            for f in &out.files {
                println!("{}", f.display());
            }
        }
        Command::Reliability {
            p,
            t,
            q0,
            years,
            prng,
            trials,
            intervals,
            seed,
            out_dir,
            format,
        } => {
            let prng = match prng {
                PrngArg::Quality => PrngKind::Quality,
                PrngArg::Lfsr => PrngKind::Lfsr,
            };
            let out = cmd_reliability(&ReliabilityArgs {
                p,
                t,
                q0,
                years,
                prng,
                trials,
                intervals,
                seed,
            })?;
            let files = reliability_files(&out, format)?;
            match out_dir {
                Some(dir) => {
                    for f in write_all(&dir, &files)? {
                        println!("{}", f.display());
                    }
                }
                None => stdout(&files[0].1)?,
            }
        }
        Command::Thresholds {
            m,
            l,
            t,
            table,
            compare,
            format,
        } => {
            let r = cmd_thresholds(&ThresholdArgs {
                m,
                l,
                t,
                table,
                compare,
            })?;
            match format {
                Some(OutputFormat::Json) => stdout(&to_json(&r))?,
                _ => print!("{r}"),
            }
        }
        Command::GenTrace {
            config,
            seed,
            out,
            trace_format,
        } => {
            let n = cmd_gen_trace(&GenTraceArgs {
                config,
                seed,
                out: out.clone(),
                format: trace_format,
            })?;
            eprintln!("wrote {n} events to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("catsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
