use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallReason {
    InsufficientLookAhead,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub frames: usize,
    pub stalls: usize,
    pub stall_total_s: f64,
    pub compute_s: f64,
    pub audio_s: f64,
    pub nuclei: usize,
    pub phonemes_consumed: usize,
    pub coverage_gaps: usize,
}

/// Everything a session reports, in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StreamEvent {
    TextIngested {
        time_s: f64,
        token: String,
        phonemes: usize,
    },
    RateChanged {
        time_s: f64,
        sps: f64,
    },
    /// Duration-state quantities for the frame about to be sampled.
    DurationState {
        time_s: f64,
        frame_index: usize,
        target_sps: f64,
        p_current: Vec<f64>,
        p_target: Vec<f64>,
        p_acc: Vec<f64>,
        src: bool,
    },
    FrameEmitted {
        frame_index: usize,
        emit_time_s: f64,
        audio_time_s: f64,
        duration_token: usize,
        semantic: u32,
        acoustic: Vec<u32>,
        covered: Vec<usize>,
        nuclei: usize,
        cursor: usize,
        /// Compute time charged to this frame.
        cost_s: f64,
    },
    CoverageGap {
        time_s: f64,
        frame_index: usize,
        phoneme: usize,
    },
    Stall {
        reason: StallReason,
        start_s: f64,
        end_s: f64,
    },
    Warning {
        time_s: f64,
        text: String,
    },
    Aborted {
        time_s: f64,
        reason: String,
    },
    Done {
        time_s: f64,
        totals: Totals,
    },
}

impl StreamEvent {
    /// The session time at which the event is reported.
    pub fn time(&self) -> f64 {
        match self {
            StreamEvent::TextIngested { time_s, .. }
            | StreamEvent::RateChanged { time_s, .. }
            | StreamEvent::DurationState { time_s, .. }
            | StreamEvent::CoverageGap { time_s, .. }
            | StreamEvent::Warning { time_s, .. }
            | StreamEvent::Aborted { time_s, .. }
            | StreamEvent::Done { time_s, .. } => *time_s,
            StreamEvent::FrameEmitted { emit_time_s, .. } => *emit_time_s,
            StreamEvent::Stall { end_s, .. } => *end_s,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, StreamEvent::Done { .. } | StreamEvent::Aborted { .. })
    }
}

/// One JSON object per line.
pub fn to_jsonl(events: &[StreamEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<StreamEvent>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("event line {}: {e}", i + 1))))
        .collect()
}
