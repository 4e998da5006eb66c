use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use fullstream_core::bench::{chunk_size_run, curves_csv, make_backend, sweep, RateScenario, SweepSpec};
use fullstream_core::corpus::SyntheticCorpus;
use fullstream_core::{BackendKind, ClockMode, EngineConfig, RateSchedule};

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Latency and stall sweep over text rate and look-ahead.
    Sweep(SweepArgs),
    /// Rate-following evaluation against a schedule.
    Rate(RateArgs),
    /// Deliver text in chunks of several words.
    Chunks(ChunkArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,inf")]
    tps: Vec<crate::Tps>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    la: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Enable rate control with this schedule and report correlation.
    #[arg(long)]
    schedule: Option<RateSchedule>,
    #[arg(long, default_value = "scripted")]
    backend: BackendKind,
    #[arg(long, default_value = "sim")]
    clock: ClockMode,
    #[arg(long, default_value_t = 40)]
    syllables: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long, default_value = "ramp:1:7")]
    schedule: RateSchedule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run with rate control off, as a baseline.
    #[arg(long)]
    no_src: bool,
    /// Curves as `time_s,target_sps,achieved_sps`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    chunk_words: Vec<usize>,
    #[arg(long, default_value = "10")]
    tps: crate::Tps,
    #[arg(long, default_value_t = 3)]
    la_min: usize,
    #[arg(long, default_value_t = 40)]
    syllables: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "scripted")]
    backend: BackendKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Sweep(a) => {
            let spec = SweepSpec {
                tps: a.tps.into_iter().map(|t| t.0).collect(),
                la: a.la,
                repetitions: a.repetitions,
                seed: a.seed,
                schedule: a.schedule,
                backend: a.backend,
                clock: a.clock,
                syllables: a.syllables,
            };
            let report = sweep(&spec)?;
            for note in &report.notes {
                eprintln!("note: {note}");
            }
            let mut out = crate::output(a.out.as_deref())?;
            out.write_all(report.to_csv().as_bytes())?;
            out.flush()?;
        }
        BenchCommand::Rate(a) => {
            let mut scenario = RateScenario::new(a.schedule, a.seed);
            scenario.src_enabled = !a.no_src;
            let eval = scenario.evaluate()?;
            eprintln!("pearson(target, achieved) = {:.4}", eval.corr);
            let mut out = crate::output(a.out.as_deref())?;
            out.write_all(curves_csv(&eval).as_bytes())?;
            out.flush()?;
        }
        BenchCommand::Chunks(a) => {
            let words = SyntheticCorpus::new(a.syllables, a.seed).words();
            let mut out = crate::output(a.out.as_deref())?;
            writeln!(out, "chunk_words,fpl_ms,stall_count,stall_total_ms,coverage_gaps,frames")?;
            for &n in &a.chunk_words {
                let cfg = EngineConfig { tps: a.tps.0, la_min: a.la_min, ..Default::default() };
                let backend = make_backend(a.backend, &cfg.dims, a.seed)?;
                let r = chunk_size_run(n, &words, cfg, backend)?;
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.chunk_words,
                    r.fpl_ms.map_or_else(String::new, |v| v.to_string()),
                    r.stall_count,
                    r.stall_total_ms,
                    r.coverage_gaps,
                    r.frames
                )?;
            }
            out.flush()?;
        }
    }
    Ok(())
}
