//! Speaking-rate control: target duration histograms per syllable rate,
//! the sliding accumulator of generated duration tokens, rate schedules,
//! and the measurement side (windowed SPS curves and correlation).

use std::collections::VecDeque;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::DurationToken;
use crate::error::{Error, Result};
use crate::sampler::DurationDistribution;
use crate::{DURATION_BINS, FRAME_RATE_HZ};

pub const DEFAULT_SMOOTHING: f64 = 1e-4;
pub const ACCUMULATOR_SECONDS: f64 = 3.0;
pub const SPS_WINDOW_SECONDS: f64 = 3.0;
/// 25% overlap between consecutive 3 s windows.
pub const SPS_HOP_SECONDS: f64 = 2.25;
pub const MIN_SCHEDULE_SPS: f64 = 0.5;
pub const MAX_SCHEDULE_SPS: f64 = 10.0;
pub const DEFAULT_ALTERNATION_PERIOD: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAnchor {
    pub sps: f64,
    pub histogram: DurationDistribution,
}

/// Duration-state histograms indexed by syllables per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTargetTable {
    anchors: Vec<RateAnchor>,
    smoothing_epsilon: f64,
}

/// Result of a table lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLookup {
    pub distribution: DurationDistribution,
    /// The requested rate fell outside the table and was clamped.
    pub clamped: bool,
}

impl RateTargetTable {
    pub fn new(anchors: Vec<RateAnchor>, smoothing_epsilon: f64) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Empty("rate table has no anchors"));
        }
        if !(smoothing_epsilon > 0.0) {
            return Err(Error::Config("smoothing epsilon must be positive".into()));
        }
        for pair in anchors.windows(2) {
            if !(pair[1].sps > pair[0].sps) {
                return Err(Error::Config(format!(
                    "anchors must be strictly increasing in sps ({} then {})",
                    pair[0].sps, pair[1].sps
                )));
            }
        }
        if let Some(a) = anchors.iter().find(|a| a.histogram.len() != DURATION_BINS) {
            return Err(Error::LengthMismatch { expected: DURATION_BINS, actual: a.histogram.len() });
        }
        Ok(Self { anchors, smoothing_epsilon })
    }

    pub fn anchors(&self) -> &[RateAnchor] {
        &self.anchors
    }

    pub fn smoothing_epsilon(&self) -> f64 {
        self.smoothing_epsilon
    }

    pub fn range(&self) -> (f64, f64) {
        (self.anchors[0].sps, self.anchors[self.anchors.len() - 1].sps)
    }

    /// Synthetic table from a parametric rate model; see [`SyntheticTableParams`].
    pub fn synthetic(params: &SyntheticTableParams) -> Self {
        let anchors = params
            .anchor_rates()
            .map(|sps| RateAnchor { sps, histogram: params.histogram_for(sps) })
            .collect();
        Self::new(anchors, DEFAULT_SMOOTHING).expect("synthetic anchors are valid")
    }

    /// Pool alignment records into anchors of `bin_width` syllables per second.
    pub fn from_alignment_records(records: &[AlignmentRecord], bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(Error::Config("bin width must be positive".into()));
        }
        let mut pooled: std::collections::BTreeMap<i64, [u64; DURATION_BINS]> = Default::default();
        for r in records {
            let key = (r.sps / bin_width).round() as i64;
            let slot = pooled.entry(key).or_insert([0; DURATION_BINS]);
            for (s, c) in slot.iter_mut().zip(r.counts) {
                *s += c;
            }
        }
        let mut anchors = Vec::new();
        for (key, counts) in pooled {
            let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            if w.iter().sum::<f64>() == 0.0 {
                continue;
            }
            anchors.push(RateAnchor { sps: key as f64 * bin_width, histogram: DurationDistribution::from_weights(&w)? });
        }
        Self::new(anchors, DEFAULT_SMOOTHING)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            anchors: Vec<RateAnchor>,
            smoothing_epsilon: f64,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(raw.anchors, raw.smoothing_epsilon)
    }
}

impl Default for RateTargetTable {
    fn default() -> Self {
        Self::synthetic(&SyntheticTableParams::default())
    }
}

/// Parametric model behind the default table. A target of `s` syllables per
/// second needs `s * phonemes_per_syllable` phonemes per second, so the mean
/// shift per frame must be `s * phonemes_per_syllable / frame_rate`. The shift
/// marginal is the maximum-entropy distribution on {0, 1, 2} with that mean;
/// each shift then splits over ppf so that double-shifts mostly cover both
/// phonemes they pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTableParams {
    pub phonemes_per_syllable: f64,
    pub frame_rate: f64,
    pub min_sps: f64,
    pub max_sps: f64,
    pub step: f64,
    /// P(ppf = 2 | shift) for shift 0, 1, 2.
    pub double_coverage: [f64; 3],
}

impl Default for SyntheticTableParams {
    fn default() -> Self {
        Self {
            phonemes_per_syllable: 2.5,
            frame_rate: FRAME_RATE_HZ,
            min_sps: MIN_SCHEDULE_SPS,
            max_sps: MAX_SCHEDULE_SPS,
            step: 0.5,
            double_coverage: [0.1, 0.2, 0.85],
        }
    }
}

impl SyntheticTableParams {
    fn anchor_rates(&self) -> impl Iterator<Item = f64> + '_ {
        let n = ((self.max_sps - self.min_sps) / self.step).round() as usize;
        (0..=n).map(move |i| self.min_sps + i as f64 * self.step)
    }

    pub fn mean_shift(&self, sps: f64) -> f64 {
        (sps * self.phonemes_per_syllable / self.frame_rate).clamp(0.02, 1.98)
    }

    pub fn histogram_for(&self, sps: f64) -> DurationDistribution {
        let shift = max_entropy_shift(self.mean_shift(sps));
        let mut p = [0.0; DURATION_BINS];
        for (s, ps) in shift.iter().enumerate() {
            let double = self.double_coverage[s];
            p[DurationToken { shift: s as u8, ppf: 1 }.id()] = ps * (1.0 - double);
            p[DurationToken { shift: s as u8, ppf: 2 }.id()] = ps * double;
        }
        DurationDistribution::from_weights(&p).expect("positive weights")
    }
}

/// `q_k ∝ exp(lambda * k)` on k = 0, 1, 2 with mean `m`, solved by bisection.
fn max_entropy_shift(m: f64) -> [f64; 3] {
    let dist = |lambda: f64| {
        let w = [1.0, libm::exp(lambda), libm::exp(2.0 * lambda)];
        let z: f64 = w.iter().sum();
        [w[0] / z, w[1] / z, w[2] / z]
    };
    let mean = |q: [f64; 3]| q[1] + 2.0 * q[2];
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(dist(mid)) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    dist(0.5 * (lo + hi))
}

/// Interpolate the table at `sps` (clamping outside its range) and smooth.
pub fn target_distribution(table: &RateTargetTable, sps: f64) -> Result<TargetLookup> {
    if !sps.is_finite() {
        return Err(Error::Config(format!("target rate {sps} is not finite")));
    }
    let anchors = &table.anchors;
    let (lo, hi) = table.range();
    let clamped = sps < lo || sps > hi;
    let s = sps.clamp(lo, hi);
    let upper = anchors.partition_point(|a| a.sps < s).min(anchors.len() - 1);
    let mixed = if anchors[upper].sps == s || upper == 0 {
        anchors[upper].histogram.clone()
    } else {
        let (a, b) = (&anchors[upper - 1], &anchors[upper]);
        let w = (s - a.sps) / (b.sps - a.sps);
        let p: Vec<f64> =
            a.histogram.probs().iter().zip(b.histogram.probs()).map(|(x, y)| (1.0 - w) * x + w * y).collect();
        DurationDistribution::from_weights(&p)?
    };
    Ok(TargetLookup { distribution: mixed.smoothed(table.smoothing_epsilon), clamped })
}

/// One line of the alignment ingestion format:
/// `utterance_id, sps, count_bin0, ..., count_bin5`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRecord {
    pub utterance_id: String,
    pub sps: f64,
    pub counts: [u64; DURATION_BINS],
}

pub fn read_alignment_records<R: BufRead>(reader: R) -> Result<Vec<AlignmentRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != 2 + DURATION_BINS {
            return Err(Error::Parse(format!("record {}: expected {} fields, got {}", line + 1, 2 + DURATION_BINS, rec.len())));
        }
        let num_err = |field: &str| Error::Parse(format!("record {}: bad number {field:?}", line + 1));
        let sps: f64 = rec[1].parse().map_err(|_| num_err(&rec[1]))?;
        let mut counts = [0u64; DURATION_BINS];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = rec[2 + i].parse().map_err(|_| num_err(&rec[2 + i]))?;
        }
        out.push(AlignmentRecord { utterance_id: rec[0].to_string(), sps, counts });
    }
    Ok(out)
}

/// Sliding histogram of the duration tokens generated over the last few
/// seconds of output.
#[derive(Debug, Clone)]
pub struct AccumulatorWindow {
    window_seconds: f64,
    smoothing_epsilon: f64,
    entries: VecDeque<(f64, usize)>,
    counts: [usize; DURATION_BINS],
}

impl Default for AccumulatorWindow {
    fn default() -> Self {
        Self::new(ACCUMULATOR_SECONDS, DEFAULT_SMOOTHING)
    }
}

impl AccumulatorWindow {
    pub fn new(window_seconds: f64, smoothing_epsilon: f64) -> Self {
        Self { window_seconds, smoothing_epsilon, entries: VecDeque::new(), counts: [0; DURATION_BINS] }
    }

    pub fn entries(&self) -> impl Iterator<Item = &(f64, usize)> {
        self.entries.iter()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.entries.back().map(|e| e.0)
    }

    /// Drop entries strictly older than `now - window_seconds`.
    fn evict(&mut self, now: f64) {
        let horizon = now - self.window_seconds;
        while let Some(&(t, id)) = self.entries.front() {
            if t >= horizon {
                break;
            }
            self.counts[id] -= 1;
            self.entries.pop_front();
        }
    }

    fn histogram(&self) -> DurationDistribution {
        let total: usize = self.counts.iter().sum();
        if total == 0 {
            return DurationDistribution::uniform(DURATION_BINS);
        }
        let p: Vec<f64> = self.counts.iter().map(|&c| c as f64 / total as f64).collect();
        DurationDistribution::from_weights(&p).expect("counts are non-negative").smoothed(self.smoothing_epsilon)
    }

    /// Record a generated token at time `t` and return the updated histogram.
    pub fn accumulate(&mut self, token: usize, t: f64) -> Result<DurationDistribution> {
        if token >= DURATION_BINS {
            return Err(Error::InvalidDurationToken(format!("id {token}")));
        }
        if let Some(last) = self.last_time() {
            if t < last {
                return Err(Error::OutOfOrder { last, got: t });
            }
        }
        self.entries.push_back((t, token));
        self.counts[token] += 1;
        self.evict(t);
        Ok(self.histogram())
    }

    /// Histogram of the window ending at `now`.
    pub fn read(&mut self, now: f64) -> DurationDistribution {
        self.evict(now);
        self.histogram()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedule {
    Constant { sps: f64 },
    /// Indexed by output time.
    LinearRamp { start_sps: f64, end_sps: f64, duration_s: f64 },
    /// Indexed by phoneme cursor: `low` for the first `period` phonemes,
    /// then `high`, and so on.
    PhonemeAlternating { low_sps: f64, high_sps: f64, period: usize },
}

impl Default for RateSchedule {
    fn default() -> Self {
        RateSchedule::Constant { sps: 4.0 }
    }
}

impl RateSchedule {
    pub fn validate(&self) -> Result<()> {
        let check = |s: f64| {
            if (MIN_SCHEDULE_SPS..=MAX_SCHEDULE_SPS).contains(&s) {
                Ok(())
            } else {
                Err(Error::Config(format!("schedule rate {s} outside [{MIN_SCHEDULE_SPS}, {MAX_SCHEDULE_SPS}]")))
            }
        };
        match *self {
            RateSchedule::Constant { sps } => check(sps),
            RateSchedule::LinearRamp { start_sps, end_sps, duration_s } => {
                check(start_sps)?;
                check(end_sps)?;
                if !(duration_s > 0.0) {
                    return Err(Error::Config("ramp duration must be positive".into()));
                }
                Ok(())
            }
            RateSchedule::PhonemeAlternating { low_sps, high_sps, period } => {
                check(low_sps)?;
                check(high_sps)?;
                if period == 0 {
                    return Err(Error::Config("alternation period must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Target rate at output time `time_s` with the cursor at `phoneme`.
    pub fn target_at(&self, time_s: f64, phoneme: usize) -> f64 {
        match *self {
            RateSchedule::Constant { sps } => sps,
            RateSchedule::LinearRamp { start_sps, end_sps, duration_s } => {
                let f = (time_s / duration_s).clamp(0.0, 1.0);
                start_sps + (end_sps - start_sps) * f
            }
            RateSchedule::PhonemeAlternating { low_sps, high_sps, period } => {
                if (phoneme / period).is_multiple_of(2) {
                    low_sps
                } else {
                    high_sps
                }
            }
        }
    }
}

/// `constant:4`, `ramp:1:7[:seconds]`, `alternate:1:7[:period]`.
impl FromStr for RateSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts.get(i).ok_or_else(|| Error::Parse(format!("schedule {s:?} is missing field {i}")))?.parse::<f64>().map_err(|_| Error::Parse(format!("schedule {s:?}: bad number")))
        };
        let schedule = match parts[0] {
            "constant" => RateSchedule::Constant { sps: num(1)? },
            "ramp" => RateSchedule::LinearRamp {
                start_sps: num(1)?,
                end_sps: num(2)?,
                duration_s: if parts.len() > 3 { num(3)? } else { 30.0 },
            },
            "alternate" => RateSchedule::PhonemeAlternating {
                low_sps: num(1)?,
                high_sps: num(2)?,
                period: if parts.len() > 3 { num(3)? as usize } else { DEFAULT_ALTERNATION_PERIOD },
            },
            other => return Err(Error::Parse(format!("unknown schedule kind {other:?}"))),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

impl fmt::Display for RateSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateSchedule::Constant { sps } => write!(f, "constant:{sps}"),
            RateSchedule::LinearRamp { start_sps, end_sps, duration_s } => {
                write!(f, "ramp:{start_sps}:{end_sps}:{duration_s}")
            }
            RateSchedule::PhonemeAlternating { low_sps, high_sps, period } => {
                write!(f, "alternate:{low_sps}:{high_sps}:{period}")
            }
        }
    }
}

/// A speaking-rate series sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsCurve {
    pub samples: Vec<(f64, f64)>,
    /// Set when the input was shorter than one window and a single
    /// whole-span estimate was used.
    pub single_window: bool,
}

impl SpsCurve {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::OutOfOrder { last: w[0].0, got: w[1].0 });
            }
        }
        Ok(Self { samples, single_window: false })
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    /// Linear interpolation, held constant beyond either end.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.samples, t)
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= t);
    let (a, b) = (points[i - 1], points[i]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// Windowed syllable rate over `(time, nuclei)` frames: 3 s windows with a
/// 2.25 s hop, each valued at its centre, then interpolated back onto the
/// frame times. Frames span `[t_first, t_last + frame_period)`.
pub fn estimate_sps(frames: &[(f64, f64)], frame_period: f64) -> Result<SpsCurve> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to estimate a rate from"));
    }
    for w in frames.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::OutOfOrder { last: w[0].0, got: w[1].0 });
        }
    }
    let t0 = frames[0].0;
    let t_end = frames[frames.len() - 1].0 + frame_period;
    let span = t_end - t0;
    if span < SPS_WINDOW_SECONDS - 1e-9 {
        let total: f64 = frames.iter().map(|f| f.1).sum();
        let sps = total / span;
        let mut curve = SpsCurve::new(frames.iter().map(|f| (f.0, sps)).collect())?;
        curve.single_window = true;
        return Ok(curve);
    }
    let mut centres = Vec::new();
    let mut k = 0usize;
    loop {
        let start = t0 + k as f64 * SPS_HOP_SECONDS;
        let end = start + SPS_WINDOW_SECONDS;
        if end > t_end + 1e-9 {
            break;
        }
        let lo = frames.partition_point(|f| f.0 < start - 1e-9);
        let hi = frames.partition_point(|f| f.0 < end - 1e-9);
        let nuclei: f64 = frames[lo..hi].iter().map(|f| f.1).sum();
        centres.push((start + SPS_WINDOW_SECONDS / 2.0, nuclei / SPS_WINDOW_SECONDS));
        k += 1;
    }
    SpsCurve::new(frames.iter().map(|f| (f.0, interpolate(&centres, f.0))).collect())
}

/// Pearson correlation of `a` with `b` resampled onto `a`'s times.
pub fn pearson(a: &SpsCurve, b: &SpsCurve) -> Result<f64> {
    if a.samples.len() < 2 || b.samples.is_empty() {
        return Err(Error::UndefinedCorrelation("need at least two points"));
    }
    let xs: Vec<f64> = a.values().collect();
    let ys: Vec<f64> = a.times().map(|t| b.value_at(t)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let scale_x = xs.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    let scale_y = ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1.0);
    if sxx <= (1e-12 * scale_x).powi(2) * n {
        return Err(Error::UndefinedCorrelation("first curve is constant"));
    }
    if syy <= (1e-12 * scale_y).powi(2) * n {
        return Err(Error::UndefinedCorrelation("second curve is constant"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Where the engine currently is, for schedule lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePosition {
    pub time_s: f64,
    pub phoneme: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOutput {
    pub target_sps: f64,
    pub p_target: DurationDistribution,
    pub p_acc: DurationDistribution,
    pub clamped: bool,
}

/// Resolves the schedule (or a live override) to `P_target` and reads
/// `P_acc` from the accumulator.
#[derive(Debug, Clone)]
pub struct RateController {
    table: RateTargetTable,
    window: AccumulatorWindow,
    schedule: RateSchedule,
    override_sps: Option<f64>,
}

impl RateController {
    pub fn new(table: RateTargetTable, schedule: RateSchedule) -> Self {
        let eps = table.smoothing_epsilon;
        Self { table, window: AccumulatorWindow::new(ACCUMULATOR_SECONDS, eps), schedule, override_sps: None }
    }

    pub fn table(&self) -> &RateTargetTable {
        &self.table
    }

    pub fn window(&self) -> &AccumulatorWindow {
        &self.window
    }

    pub fn set_target(&mut self, sps: f64) {
        self.override_sps = Some(sps);
    }

    pub fn target_sps(&self, pos: SchedulePosition) -> f64 {
        self.override_sps.unwrap_or_else(|| self.schedule.target_at(pos.time_s, pos.phoneme))
    }

    pub fn step(&mut self, pos: SchedulePosition) -> Result<ControllerOutput> {
        let target_sps = self.target_sps(pos);
        let lookup = target_distribution(&self.table, target_sps)?;
        let p_acc = self.window.read(pos.time_s);
        Ok(ControllerOutput { target_sps, p_target: lookup.distribution, p_acc, clamped: lookup.clamped })
    }

    pub fn record(&mut self, token: usize, time_s: f64) -> Result<DurationDistribution> {
        self.window.accumulate(token, time_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_anchor_table() -> RateTargetTable {
        let a = DurationDistribution::new(vec![0.5, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let b = DurationDistribution::new(vec![0.1, 0.1, 0.1, 0.1, 0.1, 0.5]).unwrap();
        RateTargetTable::new(
            vec![RateAnchor { sps: 1.0, histogram: a }, RateAnchor { sps: 7.0, histogram: b }],
            DEFAULT_SMOOTHING,
        )
        .unwrap()
    }

    #[test]
    fn lookup_at_anchor_and_midpoint() {
        let t = two_anchor_table();
        let at = target_distribution(&t, 1.0).unwrap();
        assert_eq!(at.distribution, t.anchors()[0].histogram.smoothed(DEFAULT_SMOOTHING));
        assert!(!at.clamped);
        let mid = target_distribution(&t, 4.0).unwrap();
        let expected = DurationDistribution::new(vec![0.3, 0.1, 0.1, 0.1, 0.1, 0.3]).unwrap().smoothed(DEFAULT_SMOOTHING);
        for (x, y) in mid.distribution.probs().iter().zip(expected.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn lookup_clamps_outside_range() {
        let t = two_anchor_table();
        let lo = target_distribution(&t, 0.2).unwrap();
        assert!(lo.clamped);
        assert_eq!(lo.distribution, target_distribution(&t, 1.0).unwrap().distribution);
    }

    #[test]
    fn empty_table_rejected() {
        assert!(RateTargetTable::new(vec![], 1e-4).is_err());
    }

    #[test]
    fn default_table_is_monotone_in_mean_shift() {
        let t = RateTargetTable::default();
        let (lo, hi) = t.range();
        assert!(lo <= 1.0 && hi >= 7.0);
        let mean_shift = |p: &DurationDistribution| -> f64 {
            p.probs().iter().enumerate().map(|(id, q)| (id / 2) as f64 * q).sum()
        };
        let mut prev = -1.0;
        for a in t.anchors() {
            let m = mean_shift(&a.histogram);
            assert!(m > prev);
            prev = m;
        }
        let params = SyntheticTableParams::default();
        let p4 = target_distribution(&t, 4.0).unwrap().distribution;
        assert!((mean_shift(&p4) - params.mean_shift(4.0)).abs() < 1e-3);
    }

    #[test]
    fn accumulator_starts_uniform() {
        let mut w = AccumulatorWindow::default();
        assert_eq!(w.read(0.0), DurationDistribution::uniform(6));
    }

    #[test]
    fn accumulator_single_symbol() {
        let mut w = AccumulatorWindow::default();
        let mut last = DurationDistribution::uniform(6);
        for k in 0..50 {
            last = w.accumulate(2, k as f64 / FRAME_RATE_HZ).unwrap();
        }
        assert!(last.probs()[2] > 0.999);
        assert_eq!(last, DurationDistribution::one_hot(6, 2).smoothed(DEFAULT_SMOOTHING));
    }

    #[test]
    fn accumulator_eviction_boundary() {
        let mut w = AccumulatorWindow::default();
        w.accumulate(0, 0.0).unwrap();
        let h = w.accumulate(1, 3.5).unwrap();
        assert_eq!(w.entries().count(), 1);
        assert_eq!(h, DurationDistribution::one_hot(6, 1).smoothed(DEFAULT_SMOOTHING));

        let mut w = AccumulatorWindow::default();
        w.accumulate(0, 0.5).unwrap();
        w.accumulate(1, 3.5).unwrap();
        assert_eq!(w.entries().count(), 2, "entry exactly at now - 3 s is kept");
    }

    #[test]
    fn accumulator_rejects_out_of_order() {
        let mut w = AccumulatorWindow::default();
        w.accumulate(0, 1.0).unwrap();
        assert!(matches!(w.accumulate(0, 0.5), Err(Error::OutOfOrder { .. })));
    }

    #[test]
    fn schedule_parsing_round_trip() {
        for s in ["constant:4", "ramp:1:7:30", "alternate:1:7:40"] {
            let parsed: RateSchedule = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert!("ramp:1".parse::<RateSchedule>().is_err());
        assert!("constant:20".parse::<RateSchedule>().is_err());
        assert!("alternate:1:7:0".parse::<RateSchedule>().is_err());
    }

    #[test]
    fn alternation_flips_at_period() {
        let s = RateSchedule::PhonemeAlternating { low_sps: 1.0, high_sps: 7.0, period: 40 };
        assert_eq!(s.target_at(0.0, 39), 1.0);
        assert_eq!(s.target_at(0.0, 40), 7.0);
        assert_eq!(s.target_at(0.0, 80), 1.0);
    }

    #[test]
    fn sps_constant_and_zero() {
        let frames: Vec<(f64, f64)> = (0..48).map(|i| (i as f64 * 0.25, 1.0)).collect();
        let c = estimate_sps(&frames, 0.25).unwrap();
        assert!(c.values().all(|v| (v - 4.0).abs() < 1e-12));
        assert!(!c.single_window);
        let zeros: Vec<(f64, f64)> = (0..48).map(|i| (i as f64 * 0.25, 0.0)).collect();
        assert!(estimate_sps(&zeros, 0.25).unwrap().values().all(|v| v == 0.0));
    }

    #[test]
    fn sps_short_input_falls_back() {
        let frames: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, 1.0)).collect();
        let c = estimate_sps(&frames, 0.1).unwrap();
        assert!(c.single_window);
        assert!(c.values().all(|v| (v - 10.0).abs() < 1e-9));
    }

    #[test]
    fn pearson_self_and_anti() {
        let a = SpsCurve::new((0..20).map(|i| (i as f64, (i as f64 * 0.7).sin() + i as f64 * 0.1)).collect()).unwrap();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = SpsCurve::new(a.samples.iter().map(|(t, v)| (*t, 3.0 - v)).collect()).unwrap();
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        let flat = SpsCurve::new((0..20).map(|i| (i as f64, 2.0)).collect()).unwrap();
        assert!(matches!(pearson(&a, &flat), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn controller_override_and_constant() {
        let mut c = RateController::new(RateTargetTable::default(), RateSchedule::Constant { sps: 4.0 });
        let pos = SchedulePosition { time_s: 0.0, phoneme: 0 };
        let a = c.step(pos).unwrap();
        let b = c.step(SchedulePosition { time_s: 5.0, phoneme: 30 }).unwrap();
        assert_eq!(a.p_target, b.p_target);
        c.set_target(3.0);
        let d = c.step(pos).unwrap();
        assert_eq!(d.target_sps, 3.0);
        assert_eq!(d.p_target, target_distribution(c.table(), 3.0).unwrap().distribution);
    }

    #[test]
    fn alignment_records_build_table() {
        let text = "# id, sps, counts\nu1, 2.1, 10, 5, 3, 1, 1, 0\nu2, 1.9, 10, 5, 3, 1, 1, 0\nu3, 6.0, 0, 1, 2, 3, 10, 20\n";
        let recs = read_alignment_records(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        let t = RateTargetTable::from_alignment_records(&recs, 0.5).unwrap();
        assert_eq!(t.anchors().len(), 2);
        assert_eq!(t.anchors()[0].sps, 2.0);
        assert!((t.anchors()[0].histogram.probs()[0] - 0.5).abs() < 1e-12);
        let back = RateTargetTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert!(read_alignment_records("u1, x, 1,2,3,4,5,6\n".as_bytes()).is_err());
        assert!(read_alignment_records("u1, 1.0, 1,2\n".as_bytes()).is_err());
    }
}
