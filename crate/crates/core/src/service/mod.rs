//! Transport-independent session service: message protocol, per-connection
//! state machine, session accounting and telemetry mapping. The network
//! server in the CLI crate and the in-process [`SimConnection`] both drive
//! these pieces.

mod protocol;
mod telemetry;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

pub use protocol::{parse_client_message, ClientMessage, ErrorCode, ProtocolError, StartConfig, Telemetry};
pub use telemetry::{TelemetryMapper, TelemetryQueue, MAX_RATE_LIMITED_PER_SECOND};

use crate::backbone::{Backend, BackendKind, ModelDims, ScriptProgram, ScriptedBackend, ToyBackend};
use crate::bench::mix_seed;
use crate::engine::{ClockMode, EngineConfig, RunStatus, Session, SessionHandle, StreamEvent};
use crate::error::Result;
use crate::rate::RateSchedule;
use crate::sampler::DurationDistribution;

/// Rates a client may request; anything else is clamped with a warning.
pub const CLIENT_SPS_RANGE: (f64, f64) = (1.0, 7.0);

/// Server-wide settings and live-session accounting.
#[derive(Debug)]
pub struct Hub {
    max_sessions: usize,
    active: Arc<AtomicUsize>,
    next_id: AtomicU64,
    base_seed: u64,
    backend: BackendKind,
    clock: ClockMode,
}

/// Holds one slot of the session limit until dropped.
#[derive(Debug)]
pub struct SessionPermit {
    id: u64,
    seed: u64,
    active: Arc<AtomicUsize>,
}

impl SessionPermit {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Drop for SessionPermit {
    fn drop(&mut self) {
        self.active.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Hub {
    pub fn new(max_sessions: usize, base_seed: u64, backend: BackendKind, clock: ClockMode) -> Self {
        Self {
            max_sessions,
            active: Arc::new(AtomicUsize::new(0)),
            next_id: AtomicU64::new(1),
            base_seed,
            backend,
            clock,
        }
    }

    pub fn active_sessions(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    pub fn max_sessions(&self) -> usize {
        self.max_sessions
    }

    pub fn backend(&self) -> BackendKind {
        self.backend
    }

    pub fn try_acquire(&self) -> Result<SessionPermit, ProtocolError> {
        let mut current = self.active.load(Ordering::SeqCst);
        loop {
            if current >= self.max_sessions {
                return Err(ProtocolError::new(
                    ErrorCode::SessionLimit,
                    format!("server is at its limit of {} sessions", self.max_sessions),
                ));
            }
            match self.active.compare_exchange(current, current + 1, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => break,
                Err(actual) => current = actual,
            }
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        Ok(SessionPermit { id, seed: mix_seed(self.base_seed, id), active: Arc::clone(&self.active) })
    }

    /// Engine configuration and backend for a client's start request.
    pub fn session_setup(
        &self,
        start: &StartConfig,
        seed: u64,
    ) -> Result<(EngineConfig, Box<dyn Backend>), ProtocolError> {
        let invalid = |e: crate::Error| ProtocolError::new(ErrorCode::InvalidConfig, e.to_string());
        let mut cfg = EngineConfig { clock: self.clock, src_enabled: start.src, tps: start.tps, ..Default::default() };
        cfg.sampler.rng_seed = seed;
        if let Some(v) = start.la_min {
            cfg.la_min = v;
        }
        if let Some(v) = start.la_max {
            cfg.la_max = v;
        }
        if let Some(g) = start.gamma_temp {
            cfg.guidance.gamma_temp = g;
        }
        if let Some(g) = start.gamma_depth {
            cfg.guidance.gamma_depth = g;
        }
        if let Some(s) = &start.schedule {
            cfg.schedule = s.parse::<RateSchedule>().map_err(invalid)?;
        }
        cfg.validate().map_err(invalid)?;
        let backend: Box<dyn Backend> = match self.backend {
            BackendKind::Toy => Box::new(ToyBackend::new(ModelDims::default(), seed).map_err(invalid)?),
            BackendKind::Scripted => {
                let program =
                    ScriptProgram::stationary(&DurationDistribution::uniform(6), cfg.sampler.temperature, 8);
                Box::new(ScriptedBackend::new(program).map_err(invalid)?)
            }
        };
        Ok((cfg, backend))
    }
}

/// What the transport must do in response to one client message.
#[derive(Debug)]
pub enum Effect {
    Reply(Telemetry),
    Start { session: Box<Session>, permit: SessionPermit },
}

#[derive(Debug, Default)]
enum Phase {
    #[default]
    AwaitStart,
    Running {
        handle: SessionHandle,
        src: bool,
    },
    Closed,
}

/// Per-connection protocol state. Validates ordering and forwards accepted
/// commands to the engine through its handle.
#[derive(Debug, Default)]
pub struct ProtocolState {
    phase: Phase,
}

impl ProtocolState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_running(&self) -> bool {
        matches!(self.phase, Phase::Running { .. })
    }

    /// The client went away: stop a running engine.
    pub fn disconnect(&mut self) {
        if let Phase::Running { handle, .. } = &self.phase {
            let _ = handle.stop();
        }
        self.phase = Phase::Closed;
    }

    /// The engine reported a terminal event.
    pub fn mark_closed(&mut self) {
        self.phase = Phase::Closed;
    }

    pub fn handle(&mut self, raw: &[u8], hub: &Hub) -> Vec<Effect> {
        let err = |e: ProtocolError| vec![Effect::Reply(Telemetry::error(e))];
        let msg = match parse_client_message(raw) {
            Ok(m) => m,
            Err(e) => return err(e),
        };
        match (&self.phase, msg) {
            (Phase::AwaitStart, ClientMessage::Start { config }) => {
                let permit = match hub.try_acquire() {
                    Ok(p) => p,
                    Err(e) => return err(e),
                };
                let seed = config.seed.unwrap_or(permit.seed());
                let (cfg, backend) = match hub.session_setup(&config, seed) {
                    Ok(x) => x,
                    Err(e) => return err(e),
                };
                let session = match Session::new(cfg, backend) {
                    Ok(s) => s,
                    Err(e) => return err(ProtocolError::new(ErrorCode::InvalidConfig, e.to_string())),
                };
                self.phase = Phase::Running { handle: session.handle(), src: config.src };
                vec![
                    Effect::Reply(Telemetry::Started { session: permit.id(), seed }),
                    Effect::Start { session: Box::new(session), permit },
                ]
            }
            (Phase::AwaitStart, _) => err(ProtocolError::new(ErrorCode::NotStarted, "send start first")),
            (Phase::Running { .. }, ClientMessage::Start { .. }) => {
                err(ProtocolError::new(ErrorCode::AlreadyStarted, "session already started"))
            }
            (Phase::Running { handle, .. }, ClientMessage::Text { token }) => {
                if handle.is_ended() {
                    return err(ProtocolError::new(ErrorCode::TextAfterEnd, "text after end_text"));
                }
                match handle.feed_text(&token) {
                    Ok(()) => vec![],
                    Err(e) => err(ProtocolError::new(ErrorCode::SessionEnded, e.to_string())),
                }
            }
            (Phase::Running { handle, .. }, ClientMessage::EndText) => {
                if handle.is_ended() {
                    return err(ProtocolError::new(ErrorCode::TextAfterEnd, "end_text already sent"));
                }
                match handle.end_text() {
                    Ok(()) => vec![],
                    Err(e) => err(ProtocolError::new(ErrorCode::SessionEnded, e.to_string())),
                }
            }
            (Phase::Running { handle, src }, ClientMessage::SetRate { sps }) => {
                if !*src {
                    return err(ProtocolError::new(ErrorCode::SrcDisabled, "rate control is disabled for this session"));
                }
                let (lo, hi) = CLIENT_SPS_RANGE;
                let clamped = sps.clamp(lo, hi);
                let mut out = Vec::new();
                if clamped != sps {
                    out.push(Effect::Reply(Telemetry::Warning { text: format!("rate {sps} clamped to {clamped}") }));
                }
                if let Err(e) = handle.set_rate(clamped) {
                    return err(ProtocolError::new(ErrorCode::SessionEnded, e.to_string()));
                }
                out
            }
            (Phase::Running { handle, .. }, ClientMessage::Stop) => {
                let _ = handle.stop();
                self.phase = Phase::Closed;
                vec![]
            }
            (Phase::Closed, _) => err(ProtocolError::new(ErrorCode::SessionEnded, "session has ended")),
        }
    }
}

/// In-process connection on a simulated clock: messages are handled
/// synchronously and the session only advances when asked.
#[derive(Debug)]
pub struct SimConnection {
    hub: Arc<Hub>,
    state: ProtocolState,
    session: Option<Box<Session>>,
    /// Held while the session runs; released as soon as it finishes.
    permit: Option<SessionPermit>,
    session_id: Option<u64>,
    mapper: TelemetryMapper,
    queue: TelemetryQueue,
    events: Vec<StreamEvent>,
}

impl SimConnection {
    pub fn connect(hub: Arc<Hub>) -> Self {
        Self {
            hub,
            state: ProtocolState::new(),
            session: None,
            permit: None,
            session_id: None,
            mapper: TelemetryMapper::new(),
            queue: TelemetryQueue::new(1024),
            events: Vec::new(),
        }
    }

    pub fn send(&mut self, raw: &str) {
        self.send_bytes(raw.as_bytes());
    }

    pub fn send_bytes(&mut self, raw: &[u8]) {
        for effect in self.state.handle(raw, &self.hub) {
            match effect {
                Effect::Reply(t) => self.queue.push(t),
                Effect::Start { session, permit } => {
                    self.session_id = Some(permit.id());
                    self.session = Some(session);
                    self.permit = Some(permit);
                }
            }
        }
    }

    /// Let session time advance by `seconds`, or until blocked.
    pub fn advance(&mut self, seconds: f64) {
        let Some(session) = self.session.as_mut() else { return };
        let limit = session.now() + seconds;
        self.pump(limit);
    }

    /// Run until the session finishes or waits for input.
    pub fn run_until_blocked(&mut self) {
        self.pump(f64::INFINITY);
    }

    fn pump(&mut self, limit: f64) {
        let Some(session) = self.session.as_mut() else { return };
        let mut fresh = Vec::new();
        let status = session.run_until(limit, &mut |e| fresh.push(e));
        for e in &fresh {
            if let Some(t) = self.mapper.map(e) {
                self.queue.push(t);
            }
        }
        self.events.extend(fresh);
        match status {
            Ok(RunStatus::Finished) => {
                self.state.mark_closed();
                self.permit = None;
            }
            Ok(_) => {}
            Err(e) => {
                self.queue.push(Telemetry::error(ProtocolError::new(ErrorCode::Aborted, e.to_string())));
                self.state.mark_closed();
                self.permit = None;
            }
        }
    }

    /// Telemetry produced since the last call.
    pub fn take_telemetry(&mut self) -> Vec<Telemetry> {
        self.queue.drain().collect()
    }

    /// Every engine event so far.
    pub fn events(&self) -> &[StreamEvent] {
        &self.events
    }

    pub fn session_time(&self) -> Option<f64> {
        self.session.as_ref().map(|s| s.now())
    }

    pub fn session_id(&self) -> Option<u64> {
        self.session_id
    }

    /// Drop the session, releasing its slot.
    pub fn close(&mut self) {
        self.session = None;
        self.permit = None;
        self.state.mark_closed();
    }
}

/// Map a recorded event log to telemetry, as a live connection would.
pub fn replay_telemetry(events: &[StreamEvent]) -> Vec<Telemetry> {
    let mut mapper = TelemetryMapper::new();
    events.iter().filter_map(|e| mapper.map(e)).collect()
}
