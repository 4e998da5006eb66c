use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use fullstream_core::rate::{read_alignment_records, target_distribution, SyntheticTableParams};
use fullstream_core::RateTargetTable;

#[derive(Debug, Subcommand)]
pub enum TableCommand {
    /// Write the synthetic default table as JSON.
    Synthetic {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool per-utterance duration counts into a table.
    FromAlignments(FromAlignmentsArgs),
    /// Print the target histogram for one rate.
    Lookup {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        sps: f64,
    },
}

#[derive(Debug, Args)]
pub struct FromAlignmentsArgs {
    /// CSV lines `utterance_id, sps, count0..count5`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    bin_width: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: TableCommand) -> Result<()> {
    match cmd {
        TableCommand::Synthetic { out } => {
            let table = RateTargetTable::synthetic(&SyntheticTableParams::default());
            let mut w = crate::output(out.as_deref())?;
            writeln!(w, "{}", table.to_json())?;
            w.flush()?;
        }
        TableCommand::FromAlignments(a) => {
            let file = std::fs::File::open(&a.input)?;
            let records = read_alignment_records(BufReader::new(file))?;
            let table = RateTargetTable::from_alignment_records(&records, a.bin_width)?;
            let mut w = crate::output(a.out.as_deref())?;
            writeln!(w, "{}", table.to_json())?;
            w.flush()?;
        }
        TableCommand::Lookup { table, sps } => {
            let table = match table {
                Some(p) => RateTargetTable::from_json(&crate::read_to_string(&p)?)?,
                None => RateTargetTable::default(),
            };
            let lookup = target_distribution(&table, sps)?;
            let probs: Vec<String> = lookup.distribution.probs().iter().map(|p| format!("{p:.6}")).collect();
            println!("{}", probs.join(","));
            if lookup.clamped {
                eprintln!("warning: {sps} lies outside the table range and was clamped");
            }
        }
    }
    Ok(())
}
