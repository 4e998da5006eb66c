//! Latency, real-time factor, look-ahead sweeps, chunk-size runs and
//! rate-following evaluation, all computed from event streams.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backend, BackendKind, ModelDims, ScriptProgram, ScriptedBackend, ToyBackend};
use crate::corpus::{chunk_tokens, PhonemizedToken, SyntheticCorpus};
use crate::engine::{run_tokens, ClockMode, EngineConfig, Session, StreamEvent, TextChunk};
use crate::error::{Error, Result};
use crate::rate::{estimate_sps, pearson, RateAnchor, RateSchedule, RateTargetTable, SpsCurve};
use crate::sampler::{DurationDistribution, GuidanceConfig};
use crate::FRAME_SECONDS;

/// Time from the first ingested text to the first emitted frame, in ms.
/// `None` when either never happened.
pub fn measure_fpl(events: &[StreamEvent]) -> Option<f64> {
    let first_text = events.iter().find_map(|e| match e {
        StreamEvent::TextIngested { time_s, .. } => Some(*time_s),
        _ => None,
    })?;
    let first_frame = events.iter().find_map(|e| match e {
        StreamEvent::FrameEmitted { emit_time_s, .. } => Some(*emit_time_s),
        _ => None,
    })?;
    Some((first_frame - first_text) * 1000.0)
}

/// Processing time over generated audio duration.
pub fn measure_rtf(events: &[StreamEvent]) -> Result<f64> {
    let totals = events
        .iter()
        .rev()
        .find_map(|e| match e {
            StreamEvent::Done { totals, .. } => Some(totals),
            _ => None,
        })
        .ok_or(Error::Empty("event stream has no done event"))?;
    if totals.frames == 0 {
        return Err(Error::Empty("no frames were generated"));
    }
    Ok(totals.compute_s / (totals.frames as f64 * FRAME_SECONDS))
}

/// `(audio time, nuclei)` of every emitted frame.
pub fn frame_nuclei(events: &[StreamEvent]) -> Vec<(f64, f64)> {
    events
        .iter()
        .filter_map(|e| match e {
            StreamEvent::FrameEmitted { audio_time_s, nuclei, .. } => Some((*audio_time_s, *nuclei as f64)),
            _ => None,
        })
        .collect()
}

pub fn stall_stats(events: &[StreamEvent]) -> (usize, f64) {
    events.iter().fold((0, 0.0), |(n, total), e| match e {
        StreamEvent::Stall { start_s, end_s, .. } => (n + 1, total + (end_s - start_s)),
        _ => (n, total),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEval {
    pub corr: f64,
    pub target: SpsCurve,
    pub achieved: SpsCurve,
}

/// Achieved rate from frame nuclei, target sampled from `schedule` at the
/// same frame times (with the cursor each frame started from).
pub fn rate_eval(events: &[StreamEvent], schedule: &RateSchedule) -> Result<RateEval> {
    let frames = frame_nuclei(events);
    let achieved = estimate_sps(&frames, FRAME_SECONDS)?;
    let target_samples: Vec<(f64, f64)> = events
        .iter()
        .filter_map(|e| match e {
            StreamEvent::FrameEmitted { audio_time_s, covered, .. } => {
                Some((*audio_time_s, schedule.target_at(*audio_time_s, covered.first().copied().unwrap_or(0))))
            }
            _ => None,
        })
        .collect();
    let target = SpsCurve::new(target_samples)?;
    let corr = pearson(&target, &achieved)?;
    Ok(RateEval { corr, target, achieved })
}

/// The standard rate-following scenario: a scripted backend with a fixed
/// broad duration distribution, rate control on, synthetic text long
/// enough to cover the schedule.
#[derive(Debug, Clone)]
pub struct RateScenario {
    pub schedule: RateSchedule,
    pub seed: u64,
    pub backend_distribution: DurationDistribution,
    pub syllables: usize,
    pub src_enabled: bool,
}

impl RateScenario {
    pub fn new(schedule: RateSchedule, seed: u64) -> Self {
        let syllables = expected_syllables(&schedule);
        Self {
            schedule,
            seed,
            backend_distribution: DurationDistribution::uniform(crate::DURATION_BINS),
            syllables,
            src_enabled: true,
        }
    }

    pub fn config(&self) -> EngineConfig {
        EngineConfig {
            src_enabled: self.src_enabled,
            schedule: self.schedule.clone(),
            sampler: crate::sampler::SamplerConfig { rng_seed: self.seed, ..Default::default() },
            guidance: GuidanceConfig::disabled(),
            la_min: 1,
            ..Default::default()
        }
    }

    pub fn run(&self) -> Result<Vec<StreamEvent>> {
        let cfg = self.config();
        let program = ScriptProgram::stationary(&self.backend_distribution, cfg.sampler.temperature, 8);
        let backend = ScriptedBackend::new(program)?;
        let chunks: Vec<TextChunk> =
            SyntheticCorpus::new(self.syllables, self.seed).words().into_iter().map(TextChunk::phonemes).collect();
        run_tokens(cfg, Box::new(backend), &chunks)
    }

    pub fn evaluate(&self) -> Result<RateEval> {
        rate_eval(&self.run()?, &self.schedule)
    }
}

/// Achieved rate on either side of one change in the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipResponse {
    pub time_s: f64,
    /// +1 for a faster target, -1 for a slower one.
    pub direction: f64,
    /// Syllables per second over the `span_s` before the flip.
    pub before_sps: f64,
    /// Syllables per second over the `span_s` after the flip.
    pub after_sps: f64,
}

impl FlipResponse {
    /// Change in achieved rate, signed so that following the target is positive.
    pub fn moved(&self) -> f64 {
        self.direction * (self.after_sps - self.before_sps)
    }
}

/// For every frame where the scheduled target changes, the nucleus rate in
/// the `span_s` seconds before and after (clipped to the utterance).
pub fn flip_responses(events: &[StreamEvent], schedule: &RateSchedule, span_s: f64) -> Result<Vec<FlipResponse>> {
    let eval = rate_eval(events, schedule)?;
    let frames = frame_nuclei(events);
    let end = frames.last().map_or(0.0, |f| f.0 + FRAME_SECONDS);
    let rate = |a: f64, b: f64| {
        let n: f64 = frames.iter().filter(|f| f.0 >= a && f.0 < b).map(|f| f.1).sum();
        if b > a {
            n / (b - a)
        } else {
            0.0
        }
    };
    Ok(eval
        .target
        .samples
        .windows(2)
        .filter(|w| w[1].1 != w[0].1)
        .map(|w| {
            let t = w[1].0;
            FlipResponse {
                time_s: t,
                direction: (w[1].1 - w[0].1).signum(),
                before_sps: rate((t - span_s).max(0.0), t),
                after_sps: rate(t, (t + span_s).min(end)),
            }
        })
        .collect())
}

/// Closed-loop histogram tracking: a scripted backend with a fixed
/// `P_current`, every rate mapped to the same `target` histogram, and
/// text that never runs out within the horizon.
#[derive(Debug, Clone)]
pub struct ConvergenceScenario {
    pub backend_distribution: DurationDistribution,
    pub target: DurationDistribution,
    pub seed: u64,
    pub horizon_s: f64,
    /// Trailing span of the horizon whose duration tokens are compared.
    pub final_window_s: f64,
}

impl ConvergenceScenario {
    pub fn new(backend_distribution: DurationDistribution, target: DurationDistribution, seed: u64) -> Self {
        Self { backend_distribution, target, seed, horizon_s: 60.0, final_window_s: 20.0 }
    }

    fn config(&self, src_enabled: bool) -> Result<EngineConfig> {
        let anchors = [1.0, 7.0]
            .into_iter()
            .map(|sps| RateAnchor { sps, histogram: self.target.clone() })
            .collect();
        Ok(EngineConfig {
            src_enabled,
            table: RateTargetTable::new(anchors, crate::rate::DEFAULT_SMOOTHING)?,
            sampler: crate::sampler::SamplerConfig { rng_seed: self.seed, ..Default::default() },
            guidance: GuidanceConfig::disabled(),
            la_min: 1,
            ..Default::default()
        })
    }

    /// Events up to the horizon.
    pub fn run(&self, src_enabled: bool) -> Result<Vec<StreamEvent>> {
        let cfg = self.config(src_enabled)?;
        let program = ScriptProgram::stationary(&self.backend_distribution, cfg.sampler.temperature, 8);
        let mut session = Session::new(cfg, Box::new(ScriptedBackend::new(program)?))?;
        // Shift 2 on every frame is the fastest the cursor can move.
        let syllables = (self.horizon_s * crate::FRAME_RATE_HZ * 2.0 / 2.5).ceil() as usize + 8;
        let handle = session.handle();
        for w in SyntheticCorpus::new(syllables, self.seed).words() {
            handle.feed(TextChunk::phonemes(w))?;
        }
        handle.end_text()?;
        let mut events = Vec::new();
        session.run_until(self.horizon_s, &mut |e| events.push(e))?;
        Ok(events)
    }

    /// Histogram of the duration tokens emitted in the final window,
    /// smoothed like the accumulator.
    pub fn final_histogram(&self, events: &[StreamEvent]) -> Result<DurationDistribution> {
        let from = self.horizon_s - self.final_window_s;
        let mut counts = [0.0; crate::DURATION_BINS];
        for e in events {
            if let StreamEvent::FrameEmitted { audio_time_s, duration_token, .. } = e {
                if *audio_time_s >= from {
                    counts[*duration_token] += 1.0;
                }
            }
        }
        Ok(DurationDistribution::from_weights(&counts)?.smoothed(crate::rate::DEFAULT_SMOOTHING))
    }

    /// L1 distance between the final-window histogram and the smoothed target.
    pub fn final_l1(&self, src_enabled: bool) -> Result<f64> {
        let events = self.run(src_enabled)?;
        let hist = self.final_histogram(&events)?;
        Ok(hist.l1_distance(&self.target.smoothed(crate::rate::DEFAULT_SMOOTHING)))
    }
}

/// Syllables a schedule asks for over its natural length (30 s for a ramp,
/// four periods for an alternation, 30 s for a constant), plus a margin.
fn expected_syllables(schedule: &RateSchedule) -> usize {
    let n = match *schedule {
        RateSchedule::Constant { sps } => sps * 30.0,
        RateSchedule::LinearRamp { start_sps, end_sps, duration_s } => 0.5 * (start_sps + end_sps) * duration_s,
        RateSchedule::PhonemeAlternating { period, .. } => 4.0 * period as f64 / 2.5,
    };
    n.ceil() as usize + 4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `None` is unlimited.
    pub tps: Vec<Option<f64>>,
    pub la: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub schedule: Option<RateSchedule>,
    pub backend: BackendKind,
    pub clock: ClockMode,
    /// Syllables in the synthetic corpus; text is fed one phoneme per token.
    pub syllables: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            tps: vec![Some(10.0), Some(20.0), Some(40.0), None],
            la: vec![1, 2, 3, 4, 5],
            repetitions: 1,
            seed: 0,
            schedule: None,
            backend: BackendKind::Scripted,
            clock: ClockMode::Simulated,
            syllables: 40,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tps.is_empty() || self.la.is_empty() || self.repetitions == 0 {
            return Err(Error::Config("sweep grid must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub tps: Option<f64>,
    pub la_min: usize,
    pub fpl_ms: Option<f64>,
    pub rtf: Option<f64>,
    pub stall_count: usize,
    pub stall_total_ms: f64,
    pub corr: Option<f64>,
    pub frames: usize,
    pub seed: u64,
    pub coverage_gaps: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub notes: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "tps,la_min,fpl_ms,rtf,stall_count,stall_total_ms,corr,frames,seed,coverage_gaps,error";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let tps = r.tps.map_or_else(|| "inf".to_string(), |t| format!("{t}"));
            out.push_str(&format!(
                "{tps},{},{},{},{},{},{},{},{},{},{}\n",
                r.la_min,
                fmt_opt(r.fpl_ms),
                fmt_opt(r.rtf),
                r.stall_count,
                r.stall_total_ms,
                fmt_opt(r.corr),
                r.frames,
                r.seed,
                r.coverage_gaps,
                r.error.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        out
    }

    pub fn row(&self, tps: Option<f64>, la_min: usize, seed: u64) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.tps == tps && r.la_min == la_min && r.seed == seed)
    }
}

/// SplitMix64 finalizer, used to derive per-cell seeds.
pub fn mix_seed(seed: u64, cell: u64) -> u64 {
    let mut z = seed ^ cell.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn make_backend(kind: BackendKind, dims: &ModelDims, seed: u64) -> Result<Box<dyn Backend>> {
    Ok(match kind {
        BackendKind::Toy => Box::new(ToyBackend::new(dims.clone(), seed)?),
        BackendKind::Scripted => Box::new(ScriptedBackend::new(ScriptProgram::constant_duration(2, 8))?),
    })
}

struct Cell {
    index: usize,
    tps: Option<f64>,
    la: usize,
    seed: u64,
}

fn run_cell(spec: &SweepSpec, cell: &Cell, tokens: &[PhonemizedToken]) -> BenchRow {
    let mut row = BenchRow {
        tps: cell.tps,
        la_min: cell.la,
        fpl_ms: None,
        rtf: None,
        stall_count: 0,
        stall_total_ms: 0.0,
        corr: None,
        frames: 0,
        seed: cell.seed,
        coverage_gaps: 0,
        error: None,
    };
    let result = (|| -> Result<()> {
        let cfg = EngineConfig {
            tps: cell.tps,
            la_min: cell.la,
            la_max: crate::alignment::DEFAULT_LA_MAX.max(cell.la),
            clock: spec.clock,
            src_enabled: spec.schedule.is_some(),
            schedule: spec.schedule.clone().unwrap_or_default(),
            sampler: crate::sampler::SamplerConfig {
                rng_seed: mix_seed(cell.seed, cell.index as u64),
                ..Default::default()
            },
            ..Default::default()
        };
        let backend = make_backend(spec.backend, &cfg.dims, cell.seed)?;
        let chunks: Vec<TextChunk> = tokens.iter().cloned().map(TextChunk::phonemes).collect();
        let events = run_tokens(cfg, backend, &chunks)?;
        if let Some(StreamEvent::Aborted { reason, .. }) = events.last() {
            row.error = Some(reason.clone());
        }
        row.fpl_ms = measure_fpl(&events);
        row.rtf = measure_rtf(&events).ok();
        let (n, total) = stall_stats(&events);
        row.stall_count = n;
        row.stall_total_ms = total * 1000.0;
        row.frames = frame_nuclei(&events).len();
        row.coverage_gaps = events.iter().filter(|e| matches!(e, StreamEvent::CoverageGap { .. })).count();
        if let Some(s) = &spec.schedule {
            row.corr = rate_eval(&events, s).ok().map(|r| r.corr);
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Run every (tps, la, repetition) cell on a fresh session. Cells run in
/// parallel; the report keeps grid order.
pub fn sweep(spec: &SweepSpec) -> Result<BenchReport> {
    spec.validate()?;
    let tokens = SyntheticCorpus::new(spec.syllables, spec.seed).phoneme_tokens();
    let mut cells = Vec::new();
    for rep in 0..spec.repetitions {
        for &tps in &spec.tps {
            for &la in &spec.la {
                cells.push(Cell { index: cells.len(), tps, la, seed: spec.seed + rep as u64 });
            }
        }
    }
    let rows: Vec<BenchRow> = cells.par_iter().map(|c| run_cell(spec, c, &tokens)).collect();
    Ok(BenchReport {
        rows,
        notes: vec![
            "word error rate is not measured; coverage gaps and stall statistics stand in for integrity".into(),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub chunk_words: usize,
    pub fpl_ms: Option<f64>,
    pub stall_count: usize,
    pub stall_total_ms: f64,
    pub coverage_gaps: usize,
    pub frames: usize,
}

/// Deliver `words` in chunks of `chunk_words`; each chunk counts as that
/// many tokens for arrival pacing at `config.tps`.
pub fn chunk_size_run(
    chunk_words: usize,
    words: &[PhonemizedToken],
    config: EngineConfig,
    backend: Box<dyn Backend>,
) -> Result<ChunkReport> {
    if chunk_words == 0 {
        return Err(Error::Config("chunk size must be at least 1".into()));
    }
    let chunks: Vec<TextChunk> = chunk_tokens(words, chunk_words)
        .into_iter()
        .map(|(token, n)| TextChunk::Phonemes { token, weight: n as f64 })
        .collect();
    let events = run_tokens(config, backend, &chunks)?;
    let (n, total) = stall_stats(&events);
    Ok(ChunkReport {
        chunk_words,
        fpl_ms: measure_fpl(&events),
        stall_count: n,
        stall_total_ms: total * 1000.0,
        coverage_gaps: events.iter().filter(|e| matches!(e, StreamEvent::CoverageGap { .. })).count(),
        frames: frame_nuclei(&events).len(),
    })
}

/// Target and achieved curves as `time_s,target_sps,achieved_sps` rows.
pub fn curves_csv(eval: &RateEval) -> String {
    let mut out = String::from("time_s,target_sps,achieved_sps\n");
    for ((t, target), (_, achieved)) in eval.target.samples.iter().zip(&eval.achieved.samples) {
        out.push_str(&format!("{t},{target},{achieved}\n"));
    }
    out
}
