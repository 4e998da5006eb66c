use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::events::{StallReason, StreamEvent, Totals};
use super::{ClockMode, EngineConfig, Pacing};
use crate::alignment::{
    gate, legal_duration_mask, mask_prompt, visible_window, AlignmentState, DurationToken, Phoneme, PhonemeStream,
    PromptSpec,
};
use crate::backbone::{make_cfg_batch, Backend, BackendRequest, DropFlags, DtRequest, SpeakerEmbedding};
use crate::corpus::PhonemizedToken;
use crate::error::{Error, Result};
use crate::g2p::{DictionaryG2p, GraphemeToPhoneme};
use crate::rate::{RateController, SchedulePosition};
use crate::sampler::{
    apply_matching, cfg_combine, marginal_duration, matching_weights, sample_acoustic, sample_duration,
    sample_semantic, DurationDistribution, JointLogits,
};
use crate::{FrameTokens, DURATION_BINS, N_CODEBOOKS};

/// Look-ahead used by the legality mask inside the engine: stream bounds
/// only. The gate alone decides when generation must wait for text.
const MASK_LA_MIN: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub enum TextChunk {
    /// Raw text, phonemized by the session.
    Text(String),
    /// Pre-phonemized input counting as `weight` tokens for arrival pacing.
    Phonemes { token: PhonemizedToken, weight: f64 },
}

impl TextChunk {
    pub fn phonemes(token: PhonemizedToken) -> Self {
        TextChunk::Phonemes { token, weight: 1.0 }
    }
}

#[derive(Debug)]
enum Command {
    Text(TextChunk),
    EndText,
    SetRate(f64),
    Stop,
}

/// Thread-safe command side of a session.
#[derive(Debug, Clone)]
pub struct SessionHandle {
    tx: Sender<Command>,
    ended: Arc<AtomicBool>,
    src_enabled: bool,
}

impl SessionHandle {
    fn send(&self, c: Command) -> Result<()> {
        self.tx.send(c).map_err(|_| Error::Session("session has shut down".into()))
    }

    pub fn feed_text(&self, token: &str) -> Result<()> {
        self.feed(TextChunk::Text(token.to_string()))
    }

    pub fn feed(&self, chunk: TextChunk) -> Result<()> {
        if self.ended.load(Ordering::SeqCst) {
            return Err(Error::Session("text fed after end_text".into()));
        }
        self.send(Command::Text(chunk))
    }

    pub fn end_text(&self) -> Result<()> {
        if self.ended.swap(true, Ordering::SeqCst) {
            return Err(Error::Session("end_text sent twice".into()));
        }
        self.send(Command::EndText)
    }

    pub fn set_rate(&self, sps: f64) -> Result<()> {
        if !self.src_enabled {
            return Err(Error::Session("set_rate requires rate control to be enabled".into()));
        }
        if !sps.is_finite() {
            return Err(Error::Config(format!("rate {sps} is not finite")));
        }
        self.send(Command::SetRate(sps))
    }

    pub fn stop(&self) -> Result<()> {
        self.send(Command::Stop)
    }

    pub fn is_ended(&self) -> bool {
        self.ended.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// A terminal event was emitted.
    Finished,
    /// Nothing can happen until more commands arrive.
    NeedInput,
    /// The next action lies beyond the requested time limit.
    TimeLimit,
}

#[derive(Debug)]
enum Clock {
    Simulated(f64),
    Wall(Instant),
}

impl Clock {
    fn now(&self) -> f64 {
        match self {
            Clock::Simulated(t) => *t,
            Clock::Wall(start) => start.elapsed().as_secs_f64(),
        }
    }

    fn wait_until(&mut self, t: f64) {
        match self {
            Clock::Simulated(now) => *now = now.max(t),
            Clock::Wall(start) => {
                let now = start.elapsed().as_secs_f64();
                if t > now {
                    std::thread::sleep(Duration::from_secs_f64(t - now));
                }
            }
        }
    }
}

#[derive(Debug)]
struct PendingText {
    arrival: f64,
    label: String,
    phonemes: Vec<Phoneme>,
}

enum Pending {
    Text(PendingText),
    End(f64),
}

/// One synthesis session. Not shared: a single thread drives the loop.
pub struct Session {
    config: EngineConfig,
    backend: Box<dyn Backend>,
    g2p: Box<dyn GraphemeToPhoneme>,
    speaker: SpeakerEmbedding,
    stream: PhonemeStream,
    align: AlignmentState,
    controller: RateController,
    rng: ChaCha8Rng,
    history: Vec<FrameTokens>,
    prompt_len: usize,
    rx: Receiver<Command>,
    handle: SessionHandle,
    pending: VecDeque<Pending>,
    /// Arrival time and token weight of the last scheduled text.
    last_arrival: Option<(f64, f64)>,
    rate_override: Option<f64>,
    stop_requested: bool,
    clock: Clock,
    next_start: Option<f64>,
    stall_since: Option<f64>,
    was_clamped: bool,
    totals: Totals,
    finished: bool,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("frames", &self.totals.frames)
            .field("cursor", &self.align.cursor())
            .field("finished", &self.finished)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(config: EngineConfig, backend: Box<dyn Backend>) -> Result<Self> {
        config.validate()?;
        backend.dims().validate()?;
        let speaker = match &config.speaker {
            Some(s) => s.clone(),
            None => SpeakerEmbedding::seeded(backend.dims().speaker_dim, config.sampler.rng_seed),
        };
        let (tx, rx) = mpsc::channel();
        let handle = SessionHandle { tx, ended: Arc::new(AtomicBool::new(false)), src_enabled: config.src_enabled };
        let controller = RateController::new(config.table.clone(), config.schedule.clone());
        let clock = match config.clock {
            ClockMode::Simulated => Clock::Simulated(0.0),
            ClockMode::Wall => Clock::Wall(Instant::now()),
        };
        let prompt = config.prompt.clone();
        let mut session = Self {
            rng: ChaCha8Rng::seed_from_u64(config.sampler.rng_seed),
            config,
            backend,
            g2p: Box::new(DictionaryG2p::default()),
            speaker,
            stream: PhonemeStream::new(),
            align: AlignmentState::new(),
            controller,
            history: Vec::new(),
            prompt_len: 0,
            rx,
            handle,
            pending: VecDeque::new(),
            last_arrival: None,
            rate_override: None,
            stop_requested: false,
            clock,
            next_start: None,
            stall_since: None,
            was_clamped: false,
            totals: Totals::default(),
            finished: false,
        };
        if let Some(p) = prompt {
            session.prompt_prefill(&p)?;
        }
        Ok(session)
    }

    pub fn with_g2p(mut self, g2p: Box<dyn GraphemeToPhoneme>) -> Self {
        self.g2p = g2p;
        self
    }

    pub fn handle(&self) -> SessionHandle {
        self.handle.clone()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn alignment(&self) -> &AlignmentState {
        &self.align
    }

    pub fn stream(&self) -> &PhonemeStream {
        &self.stream
    }

    /// Frames known to the backend, prompt included.
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn totals(&self) -> &Totals {
        &self.totals
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    /// Push prompt frames with masked text ahead of generation.
    pub fn prompt_prefill(&mut self, prompt: &PromptSpec) -> Result<()> {
        if self.totals.frames > 0 {
            return Err(Error::Session("prompt supplied after generation started".into()));
        }
        if self.prompt_len > 0 {
            return Err(Error::Session("prompt already supplied".into()));
        }
        if prompt.frame_count() == 0 {
            return Ok(());
        }
        let masked = mask_prompt(prompt);
        self.backend.prefill(prompt, &masked)?;
        self.history.extend_from_slice(&prompt.audio_tokens);
        self.prompt_len = prompt.frame_count();
        Ok(())
    }

    fn drain_commands(&mut self) {
        while let Ok(c) = self.rx.try_recv() {
            self.accept(c);
        }
    }

    fn accept(&mut self, command: Command) {
        let submit = self.clock.now();
        match command {
            Command::Text(chunk) => {
                let (label, phonemes, weight) = match chunk {
                    TextChunk::Text(s) => {
                        let ph = self.g2p.phonemize(&s);
                        (s, ph, 1.0)
                    }
                    TextChunk::Phonemes { token, weight } => (token.label, token.phonemes, weight),
                };
                let arrival = match (self.config.tps, self.last_arrival) {
                    (Some(tps), Some((prev, w))) => submit.max(prev + w / tps),
                    (_, Some((prev, _))) => submit.max(prev),
                    (_, None) => submit,
                };
                self.last_arrival = Some((arrival, weight));
                self.pending.push_back(Pending::Text(PendingText { arrival, label, phonemes }));
            }
            Command::EndText => {
                let at = self.last_arrival.map_or(submit, |(a, _)| a.max(submit));
                self.pending.push_back(Pending::End(at));
            }
            Command::SetRate(sps) => self.rate_override = Some(sps),
            Command::Stop => self.stop_requested = true,
        }
    }

    fn next_pending_time(&self) -> Option<f64> {
        self.pending.front().map(|p| match p {
            Pending::Text(t) => t.arrival,
            Pending::End(t) => *t,
        })
    }

    /// Ingest every pending item due at or before `t`.
    fn ingest_until(&mut self, t: f64, sink: &mut dyn FnMut(StreamEvent)) -> Result<()> {
        while self.next_pending_time().is_some_and(|a| a <= t) {
            match self.pending.pop_front().expect("peeked") {
                Pending::Text(p) => {
                    self.stream.extend(&p.phonemes)?;
                    sink(StreamEvent::TextIngested { time_s: p.arrival, token: p.label, phonemes: p.phonemes.len() });
                }
                Pending::End(_) => self.stream.end(),
            }
        }
        Ok(())
    }

    fn gate_open(&self) -> bool {
        gate(&self.stream, &self.align, self.config.la_min)
    }

    fn finish(&mut self, sink: &mut dyn FnMut(StreamEvent)) {
        self.finished = true;
        sink(StreamEvent::Done { time_s: self.clock.now(), totals: self.totals.clone() });
    }

    fn abort(&mut self, reason: String, sink: &mut dyn FnMut(StreamEvent)) {
        self.finished = true;
        sink(StreamEvent::Aborted { time_s: self.clock.now(), reason });
    }

    /// Advance until the session finishes or needs more input.
    pub fn run_until_blocked(&mut self, sink: &mut dyn FnMut(StreamEvent)) -> Result<RunStatus> {
        self.run_until(f64::INFINITY, sink)
    }

    /// Like [`Session::run_until_blocked`], but never starts a frame or
    /// ingests text later than session time `limit`.
    pub fn run_until(&mut self, limit: f64, sink: &mut dyn FnMut(StreamEvent)) -> Result<RunStatus> {
        loop {
            if self.finished {
                return Ok(RunStatus::Finished);
            }
            self.drain_commands();
            if self.stop_requested {
                self.abort("stopped by client".into(), sink);
                return Ok(RunStatus::Finished);
            }
            let now = self.clock.now();
            let tick = self.next_start.unwrap_or(now).max(now);
            if tick > limit {
                self.clock.wait_until(limit);
                return Ok(RunStatus::TimeLimit);
            }
            self.ingest_until(tick, sink)?;
            if self.stream.fully_consumed(&self.align) {
                self.clock.wait_until(tick);
                self.finish(sink);
                return Ok(RunStatus::Finished);
            }
            if !self.gate_open() {
                if self.totals.frames > 0 && self.stall_since.is_none() {
                    self.stall_since = Some(tick);
                }
                match self.next_pending_time() {
                    Some(t) if t > limit => {
                        self.clock.wait_until(limit);
                        return Ok(RunStatus::TimeLimit);
                    }
                    Some(t) => {
                        self.clock.wait_until(t);
                        self.next_start = Some(t);
                        continue;
                    }
                    None => {
                        self.clock.wait_until(tick);
                        return Ok(RunStatus::NeedInput);
                    }
                }
            }
            self.clock.wait_until(tick);
            if let Some(start) = self.stall_since.take() {
                self.totals.stalls += 1;
                self.totals.stall_total_s += tick - start;
                sink(StreamEvent::Stall { reason: StallReason::InsufficientLookAhead, start_s: start, end_s: tick });
            }
            if self.totals.frames >= self.config.max_frames {
                self.abort(format!("frame limit {} reached", self.config.max_frames), sink);
                return Ok(RunStatus::Finished);
            }
            if let Err(e) = self.frame(tick, sink) {
                self.abort(format!("backend failure: {e}"), sink);
                return Ok(RunStatus::Finished);
            }
        }
    }

    /// Drive the loop, blocking on the command queue whenever input is needed.
    pub fn run(&mut self, sink: &mut dyn FnMut(StreamEvent)) -> Result<()> {
        loop {
            match self.run_until_blocked(sink)? {
                RunStatus::Finished => return Ok(()),
                RunStatus::TimeLimit => unreachable!("no limit was set"),
                RunStatus::NeedInput => match self.rx.recv() {
                    Ok(c) => self.accept(c),
                    Err(_) => return Err(Error::Session("command channel closed".into())),
                },
            }
        }
    }

    /// Run with every command already queued; input running dry without
    /// `end_text` is an error.
    pub fn run_to_end(&mut self) -> Result<Vec<StreamEvent>> {
        let mut events = Vec::new();
        match self.run_until_blocked(&mut |e| events.push(e))? {
            RunStatus::Finished => Ok(events),
            RunStatus::NeedInput | RunStatus::TimeLimit => Err(Error::Session("input ran out before end_text".into())),
        }
    }

    fn frame(&mut self, start: f64, sink: &mut dyn FnMut(StreamEvent)) -> Result<()> {
        let wall = Instant::now();
        let k = self.totals.frames;
        let frame_index = self.prompt_len + k;
        let period = self.config.frame_period();
        let audio_t = k as f64 * period;
        let cursor = self.align.cursor();

        if let Some(sps) = self.rate_override.take() {
            self.controller.set_target(sps);
            sink(StreamEvent::RateChanged { time_s: start, sps });
        }
        let ctrl = self.controller.step(SchedulePosition { time_s: audio_t, phoneme: cursor })?;
        if ctrl.clamped && !self.was_clamped {
            sink(StreamEvent::Warning {
                time_s: start,
                text: format!("target rate {} outside the table range, clamped", ctrl.target_sps),
            });
        }
        self.was_clamped = ctrl.clamped;

        let guidance = self.config.guidance.clone();
        let sampler = self.config.sampler.clone();
        let n_vocab = self.backend.dims().n_semantic_vocab;
        let window = visible_window(&self.stream, &self.align, self.config.la_max);
        let request = BackendRequest {
            window,
            history: &self.history,
            speaker: &self.speaker,
            drops: DropFlags::default(),
            frame_index,
            cursor,
        };
        let temporal_cfg = guidance.temporal_enabled();
        let batch = if temporal_cfg {
            let (c, u) = make_cfg_batch(&request, &guidance);
            vec![c, u]
        } else {
            vec![request]
        };
        let mut tt = self.backend.tt_step(&batch)?;
        if tt.len() != batch.len() {
            return Err(Error::Dimension(format!("backend returned {} outputs for {}", tt.len(), batch.len())));
        }
        let cond_tt = tt.swap_remove(0);
        let cond = JointLogits::from_flat(DURATION_BINS, n_vocab, cond_tt.joint.clone())?;
        let p_current = marginal_duration(&cond, sampler.temperature)?;
        sink(StreamEvent::DurationState {
            time_s: start,
            frame_index: k,
            target_sps: ctrl.target_sps,
            p_current: p_current.probs().to_vec(),
            p_target: ctrl.p_target.probs().to_vec(),
            p_acc: ctrl.p_acc.probs().to_vec(),
            src: self.config.src_enabled,
        });
        let p = if self.config.src_enabled {
            let w = matching_weights(&ctrl.p_target, &ctrl.p_acc, sampler.beta)?;
            apply_matching(&p_current, &w)?
        } else {
            p_current
        };
        let mask = legal_duration_mask(&self.align, &self.stream, MASK_LA_MIN);
        let p = legal_distribution(&p, &mask)?;
        let d = sample_duration(&p, sampler.top_p, &mut self.rng);
        let guided = if temporal_cfg {
            let uncond = &tt[0];
            JointLogits::from_flat(
                DURATION_BINS,
                n_vocab,
                cfg_combine(&cond_tt.joint, &uncond.joint, guidance.gamma_temp)?,
            )?
        } else {
            cond
        };
        let semantic = sample_semantic(&guided, d, sampler.top_k, sampler.temperature, &mut self.rng)? as u32;

        let dreq = DtRequest {
            embedding: &cond_tt.embedding,
            semantic,
            speaker: &self.speaker,
            speaker_dropped: false,
            history: &self.history,
            frame_index,
            cursor,
        };
        let codebooks = if guidance.speaker_cfg_enabled {
            let mut out = self.backend.dt_step(&[dreq, DtRequest { speaker_dropped: true, ..dreq }])?;
            if out.len() != 2 {
                return Err(Error::Dimension("depth step returned the wrong batch size".into()));
            }
            let uncond = out.pop().expect("two outputs");
            let cond = out.pop().expect("two outputs");
            check_codebooks(&cond.codebooks)?;
            check_codebooks(&uncond.codebooks)?;
            cond.codebooks
                .iter()
                .zip(&uncond.codebooks)
                .map(|(c, u)| cfg_combine(c, u, guidance.gamma_depth))
                .collect::<Result<Vec<_>>>()?
        } else {
            let out = self.backend.dt_step(&[dreq])?;
            let first = out.into_iter().next().ok_or(Error::Empty("depth step output"))?;
            check_codebooks(&first.codebooks)?;
            first.codebooks
        };
        let acoustic = sample_acoustic(&codebooks)?;

        let token = DurationToken::from_id(d)?;
        let coverage = self.align.advance(token, &self.stream, MASK_LA_MIN)?;
        self.controller.record(d, audio_t)?;
        let mut frame: FrameTokens = [0; N_CODEBOOKS];
        frame[0] = semantic;
        for (slot, a) in frame[1..].iter_mut().zip(&acoustic) {
            *slot = *a as u32;
        }
        self.history.push(frame);

        let cost = match self.config.clock {
            ClockMode::Simulated => self.backend.cost().frame_ms() / 1000.0,
            ClockMode::Wall => wall.elapsed().as_secs_f64(),
        };
        let emit = start + cost;
        if let Clock::Simulated(now) = &mut self.clock {
            *now = emit;
        }
        self.ingest_until(emit, sink)?;

        self.totals.frames += 1;
        self.totals.compute_s += cost;
        self.totals.audio_s = self.totals.frames as f64 * period;
        self.totals.nuclei += coverage.nuclei;
        self.totals.phonemes_consumed = self.align.cursor();
        if let Some(ph) = coverage.gap {
            self.totals.coverage_gaps += 1;
            sink(StreamEvent::CoverageGap { time_s: start, frame_index: k, phoneme: ph });
        }
        sink(StreamEvent::FrameEmitted {
            frame_index: k,
            emit_time_s: emit,
            audio_time_s: audio_t,
            duration_token: d,
            semantic,
            acoustic: frame[1..].to_vec(),
            covered: coverage.covered,
            nuclei: coverage.nuclei,
            cursor: self.align.cursor(),
            cost_s: cost,
        });
        self.next_start = Some(match self.config.pacing {
            Pacing::Realtime => (start + period).max(emit),
            Pacing::Free => emit,
        });
        Ok(())
    }
}

fn check_codebooks(codebooks: &[Vec<f64>]) -> Result<()> {
    if codebooks.len() != crate::N_ACOUSTIC {
        return Err(Error::LengthMismatch { expected: crate::N_ACOUSTIC, actual: codebooks.len() });
    }
    Ok(())
}

/// Zero illegal tokens and renormalize. If every legal token has zero mass
/// the legal tokens are taken as equally likely.
fn legal_distribution(p: &DurationDistribution, mask: &[bool; DURATION_BINS]) -> Result<DurationDistribution> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Session("no legal duration token while the gate is open".into()));
    }
    match p.masked(mask) {
        Ok(d) => Ok(d),
        Err(Error::Underflow) => {
            let w: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            DurationDistribution::from_weights(&w)
        }
        Err(e) => Err(e),
    }
}

/// Feed `chunks`, end the text, and run a fresh session to completion.
pub fn run_tokens(config: EngineConfig, backend: Box<dyn Backend>, chunks: &[TextChunk]) -> Result<Vec<StreamEvent>> {
    let mut session = Session::new(config, backend)?;
    let handle = session.handle();
    for c in chunks {
        handle.feed(c.clone())?;
    }
    handle.end_text()?;
    session.run_to_end()
}
