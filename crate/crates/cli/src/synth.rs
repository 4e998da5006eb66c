use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use fullstream_core::bench::make_backend;
use fullstream_core::corpus::parse_phoneme_file;
use fullstream_core::engine::{run_tokens, to_jsonl, TextChunk};
use fullstream_core::{BackendKind, ClockMode, EngineConfig, RateSchedule, RateTargetTable};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Input text, split on whitespace into tokens.
    #[arg(long, conflicts_with = "phonemes_file")]
    text: Option<String>,
    /// Pre-phonemized input, one token per line.
    #[arg(long)]
    phonemes_file: Option<PathBuf>,
    /// Text tokens per second, or `inf`.
    #[arg(long, default_value = "inf")]
    tps: crate::Tps,
    #[arg(long, default_value_t = 3)]
    la_min: usize,
    #[arg(long, default_value_t = 25)]
    la_max: usize,
    /// Enable speaking-rate control.
    #[arg(long)]
    src: bool,
    /// `constant:S`, `ramp:A:B[:SECONDS]` or `alternate:LOW:HIGH[:PERIOD]`.
    #[arg(long)]
    schedule: Option<RateSchedule>,
    /// Rate target table as JSON; the synthetic table otherwise.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    gamma_temp: Option<f64>,
    #[arg(long)]
    gamma_depth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `sim` or `wall`.
    #[arg(long, default_value = "sim")]
    clock: ClockMode,
    /// `toy` or `scripted`.
    #[arg(long, default_value = "toy")]
    backend: BackendKind,
    /// Event log path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn chunks(args: &SynthArgs) -> Result<Vec<TextChunk>> {
    if let Some(path) = &args.phonemes_file {
        let tokens = parse_phoneme_file(&crate::read_to_string(path)?)?;
        return Ok(tokens.into_iter().map(TextChunk::phonemes).collect());
    }
    match &args.text {
        Some(t) => Ok(t.split_whitespace().map(|w| TextChunk::Text(w.to_string())).collect()),
        None => bail!("one of --text or --phonemes-file is required"),
    }
}

pub fn config(args: &SynthArgs) -> Result<EngineConfig> {
    let mut cfg = EngineConfig {
        tps: args.tps.0,
        la_min: args.la_min,
        la_max: args.la_max,
        src_enabled: args.src,
        clock: args.clock,
        ..Default::default()
    };
    cfg.sampler.rng_seed = args.seed;
    if let Some(s) = &args.schedule {
        cfg.schedule = s.clone();
    }
    if let Some(p) = &args.table {
        cfg.table = RateTargetTable::from_json(&crate::read_to_string(p)?).context("loading rate table")?;
    }
    if let Some(g) = args.gamma_temp {
        cfg.guidance.gamma_temp = g;
    }
    if let Some(g) = args.gamma_depth {
        cfg.guidance.gamma_depth = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: SynthArgs) -> Result<()> {
    let cfg = config(&args)?;
    let input = chunks(&args)?;
    let backend = make_backend(args.backend, &cfg.dims, args.seed)?;
    let events = run_tokens(cfg, backend, &input)?;
    let mut out = crate::output(args.out.as_deref())?;
    out.write_all(to_jsonl(&events).as_bytes())?;
    out.flush()?;
    Ok(())
}
