use std::collections::VecDeque;

use super::protocol::{ErrorCode, Telemetry};
use crate::engine::StreamEvent;
use crate::rate::SPS_WINDOW_SECONDS;

/// Most rate-limited messages per kind in any one-second span.
pub const MAX_RATE_LIMITED_PER_SECOND: usize = 10;
/// Slots per second kept free for rate changes in the sps stream.
const RATE_CHANGE_HEADROOM: usize = 2;

/// Sliding one-second window of send times.
#[derive(Debug, Clone, Default)]
struct Throttle {
    sent: VecDeque<f64>,
}

impl Throttle {
    fn admit(&mut self, t: f64, limit: usize) -> bool {
        while self.sent.front().is_some_and(|&s| s <= t - 1.0) {
            self.sent.pop_front();
        }
        if self.sent.len() < limit {
            self.sent.push_back(t);
            true
        } else {
            false
        }
    }
}

/// Turns engine events into telemetry, at most one message per event.
///
/// Duration-state events rotate through sps, histogram, sps, metrics so
/// each kind stays well under the per-second limit at 12.5 frames per
/// second; a throttle enforces the limit regardless.
#[derive(Debug, Clone, Default)]
pub struct TelemetryMapper {
    sps: Throttle,
    histogram: Throttle,
    metrics: Throttle,
    recent: VecDeque<(f64, usize)>,
    first_text: Option<f64>,
    fpl_ms: Option<f64>,
    frames: usize,
    compute_s: f64,
    last_target: f64,
}

impl TelemetryMapper {
    pub fn new() -> Self {
        Self::default()
    }

    fn achieved(&self, now_audio: f64) -> f64 {
        let nuclei: usize = self.recent.iter().map(|r| r.1).sum();
        let span = (now_audio + crate::FRAME_SECONDS).min(SPS_WINDOW_SECONDS);
        if span <= 0.0 {
            0.0
        } else {
            nuclei as f64 / span
        }
    }

    pub fn map(&mut self, event: &StreamEvent) -> Option<Telemetry> {
        match event {
            StreamEvent::TextIngested { time_s, .. } => {
                self.first_text.get_or_insert(*time_s);
                None
            }
            StreamEvent::RateChanged { time_s, sps } => {
                self.last_target = *sps;
                let audio = self.recent.back().map_or(0.0, |r| r.0);
                self.sps
                    .admit(*time_s, MAX_RATE_LIMITED_PER_SECOND)
                    .then(|| Telemetry::Sps { t: *time_s, target: *sps, achieved: self.achieved(audio) })
            }
            StreamEvent::DurationState { time_s, frame_index, target_sps, p_target, p_acc, .. } => {
                self.last_target = *target_sps;
                let audio = self.recent.back().map_or(0.0, |r| r.0);
                match frame_index % 4 {
                    0 | 2 => self
                        .sps
                        .admit(*time_s, MAX_RATE_LIMITED_PER_SECOND - RATE_CHANGE_HEADROOM)
                        .then(|| Telemetry::Sps { t: *time_s, target: *target_sps, achieved: self.achieved(audio) }),
                    1 => self.histogram.admit(*time_s, MAX_RATE_LIMITED_PER_SECOND).then(|| Telemetry::Histogram {
                        t: *time_s,
                        p_acc: p_acc.clone(),
                        p_target: p_target.clone(),
                    }),
                    _ => self.metrics.admit(*time_s, MAX_RATE_LIMITED_PER_SECOND).then(|| Telemetry::Metrics {
                        fpl_ms: self.fpl_ms,
                        rtf_so_far: self.rtf(),
                    }),
                }
            }
            StreamEvent::FrameEmitted {
                frame_index,
                emit_time_s,
                audio_time_s,
                duration_token,
                semantic,
                covered,
                nuclei,
                cost_s,
                ..
            } => {
                if self.fpl_ms.is_none() {
                    self.fpl_ms = self.first_text.map(|t| (emit_time_s - t) * 1000.0);
                }
                self.frames += 1;
                self.compute_s += cost_s;
                self.recent.push_back((*audio_time_s, *nuclei));
                while self.recent.front().is_some_and(|r| r.0 <= audio_time_s - SPS_WINDOW_SECONDS) {
                    self.recent.pop_front();
                }
                Some(Telemetry::Frame {
                    index: *frame_index,
                    t: *emit_time_s,
                    duration_token: *duration_token,
                    semantic: *semantic,
                    covered: covered.clone(),
                })
            }
            StreamEvent::Warning { text, .. } => Some(Telemetry::Warning { text: text.clone() }),
            StreamEvent::Aborted { reason, .. } => {
                Some(Telemetry::Error { code: ErrorCode::Aborted, text: reason.clone() })
            }
            StreamEvent::Done { totals, .. } => Some(Telemetry::Done { totals: totals.clone() }),
            StreamEvent::Stall { .. } | StreamEvent::CoverageGap { .. } => None,
        }
    }

    fn rtf(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.compute_s / (self.frames as f64 * crate::FRAME_SECONDS)
        }
    }

    pub fn last_target(&self) -> f64 {
        self.last_target
    }
}

/// Outbound queue for one connection. When full, the oldest rate-limited
/// message is discarded; frames and terminal messages are never dropped,
/// so the queue may exceed its capacity by those alone.
#[derive(Debug, Clone)]
pub struct TelemetryQueue {
    items: VecDeque<Telemetry>,
    capacity: usize,
    dropped: usize,
}

impl TelemetryQueue {
    pub fn new(capacity: usize) -> Self {
        Self { items: VecDeque::new(), capacity: capacity.max(1), dropped: 0 }
    }

    pub fn push(&mut self, msg: Telemetry) {
        if self.items.len() >= self.capacity {
            if let Some(i) = self.items.iter().position(Telemetry::is_droppable) {
                self.items.remove(i);
                self.dropped += 1;
            } else if msg.is_droppable() {
                self.dropped += 1;
                return;
            }
        }
        self.items.push_back(msg);
    }

    pub fn pop(&mut self) -> Option<Telemetry> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn drain(&mut self) -> impl Iterator<Item = Telemetry> + '_ {
        self.items.drain(..)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throttle_window() {
        let mut t = Throttle::default();
        let admitted = (0..100).filter(|i| t.admit(*i as f64 * 0.01, 10)).count();
        assert_eq!(admitted, 10);
        assert!(t.admit(1.0, 10));
    }

    #[test]
    fn queue_drops_oldest_rate_limited() {
        let mut q = TelemetryQueue::new(2);
        q.push(Telemetry::Sps { t: 0.0, target: 1.0, achieved: 0.0 });
        q.push(Telemetry::Frame { index: 0, t: 0.0, duration_token: 0, semantic: 0, covered: vec![0] });
        q.push(Telemetry::Sps { t: 0.1, target: 2.0, achieved: 0.0 });
        assert_eq!(q.dropped(), 1);
        let items: Vec<_> = q.drain().collect();
        assert!(matches!(items[0], Telemetry::Frame { .. }));
        assert!(matches!(items[1], Telemetry::Sps { target, .. } if target == 2.0));
        let mut q = TelemetryQueue::new(1);
        for i in 0..5 {
            q.push(Telemetry::Frame { index: i, t: 0.0, duration_token: 0, semantic: 0, covered: vec![] });
        }
        assert_eq!(q.len(), 5);
    }
}
