mod bench;
mod serve;
mod synth;
mod table;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fullstream", version, about = "Full-stream speech-token synthesis engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize one utterance and write its event stream as JSON lines.
    Synth(synth::SynthArgs),
    /// Latency sweeps, chunk-size runs and rate-following evaluation.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
    /// Serve sessions over WebSocket.
    Serve(serve::ServeArgs),
    /// Build and inspect rate target tables.
    #[command(subcommand)]
    Table(table::TableCommand),
}

/// Text tokens per second: a positive number, or `inf` for unlimited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tps(pub Option<f64>);

impl std::str::FromStr for Tps {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "inf" | "unlimited" => Ok(Tps(None)),
            v => {
                let x: f64 = v.parse().map_err(|_| format!("bad tps {v:?}"))?;
                if x.is_infinite() {
                    Ok(Tps(None))
                } else if x > 0.0 {
                    Ok(Tps(Some(x)))
                } else {
                    Err(format!("tps must be positive, got {v}"))
                }
            }
        }
    }
}

/// Writer for `path`, or stdout when absent or `-`.
pub(crate) fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub(crate) fn read_to_string(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Bench(cmd) => bench::run(cmd),
        Command::Serve(args) => serve::run(args),
        Command::Table(cmd) => table::run(cmd),
    }
}
