//! The streaming session loop.
//!
//! A [`Session`] owns the phoneme buffer, alignment state, rate controller,
//! backend and rng. Text, rate changes and stop requests arrive through a
//! [`SessionHandle`] from any thread and are applied at frame boundaries.
//! Each frame runs: guided temporal step, duration marginal from the
//! conditional branch, optional distribution matching, legality mask,
//! nucleus duration sample, top-k semantic sample from guided logits,
//! guided depth step, greedy acoustic tokens, alignment advance.

mod events;
mod session;

use serde::{Deserialize, Serialize};

pub use events::{from_jsonl, to_jsonl, StallReason, StreamEvent, Totals};
pub use session::{run_tokens, RunStatus, Session, SessionHandle, TextChunk};

use crate::alignment::{PromptSpec, DEFAULT_LA_MAX, DEFAULT_LA_MIN};
use crate::backbone::{ModelDims, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::rate::{RateSchedule, RateTargetTable};
use crate::sampler::{GuidanceConfig, SamplerConfig};
use crate::FRAME_RATE_HZ;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Virtual time: backend calls cost their configured synthetic amounts.
    #[default]
    Simulated,
    /// Real elapsed time.
    Wall,
}

impl std::str::FromStr for ClockMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" | "simulated" => Ok(ClockMode::Simulated),
            "wall" => Ok(ClockMode::Wall),
            other => Err(Error::Parse(format!("unknown clock {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// Frame starts are spaced one frame period apart, like a playback
    /// buffer draining in real time.
    #[default]
    Realtime,
    /// Each frame starts as soon as the previous one is out.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Text tokens per second; `None` delivers text as soon as it is fed.
    pub tps: Option<f64>,
    pub la_min: usize,
    pub la_max: usize,
    pub frame_rate: f64,
    pub src_enabled: bool,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceConfig,
    pub schedule: RateSchedule,
    pub table: RateTargetTable,
    pub clock: ClockMode,
    pub pacing: Pacing,
    pub prompt: Option<PromptSpec>,
    pub dims: ModelDims,
    pub speaker: Option<SpeakerEmbedding>,
    /// Abort instead of looping forever on a backend that never advances.
    pub max_frames: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tps: None,
            la_min: DEFAULT_LA_MIN,
            la_max: DEFAULT_LA_MAX,
            frame_rate: FRAME_RATE_HZ,
            src_enabled: false,
            sampler: SamplerConfig::default(),
            guidance: GuidanceConfig::default(),
            schedule: RateSchedule::default(),
            table: RateTargetTable::default(),
            clock: ClockMode::Simulated,
            pacing: Pacing::Realtime,
            prompt: None,
            dims: ModelDims::default(),
            speaker: None,
            max_frames: 20_000,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.la_min < 1 {
            return Err(Error::Config("la_min must be at least 1".into()));
        }
        if self.la_min > self.la_max {
            return Err(Error::Config(format!("la_min {} exceeds la_max {}", self.la_min, self.la_max)));
        }
        if let Some(tps) = self.tps {
            if !(tps > 0.0) || tps.is_nan() {
                return Err(Error::Config(format!("tps must be positive, got {tps}")));
            }
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        self.sampler.validate()?;
        self.guidance.validate()?;
        self.schedule.validate()?;
        Ok(())
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }
}
