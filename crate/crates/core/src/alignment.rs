//! Incremental phoneme buffer and the monotonic alignment state machine
//! driven by duration tokens.
//!
//! A duration token is a `(shift, ppf)` pair: the frame being emitted covers
//! `ppf` phonemes starting at the cursor, then the cursor moves forward by
//! `shift`. Cursor positions count non-punctuation phonemes only; the
//! punctuation symbols stay in the buffer because the phoneme encoder reads
//! them, but the temporal model never aligns frames to them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{FrameTokens, DURATION_BINS, FRAME_RATE_HZ};

pub const DEFAULT_LA_MIN: usize = 3;
pub const DEFAULT_LA_MAX: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phoneme {
    pub symbol: u32,
    pub is_punctuation: bool,
    pub is_syllable_nucleus: bool,
}

impl Phoneme {
    pub fn new(symbol: u32, is_punctuation: bool, is_syllable_nucleus: bool) -> Result<Self> {
        if is_punctuation && is_syllable_nucleus {
            return Err(Error::Parse(format!("punctuation symbol {symbol} cannot be a syllable nucleus")));
        }
        Ok(Self { symbol, is_punctuation, is_syllable_nucleus })
    }

    pub fn plain(symbol: u32) -> Self {
        Self { symbol, is_punctuation: false, is_syllable_nucleus: false }
    }

    pub fn nucleus(symbol: u32) -> Self {
        Self { symbol, is_punctuation: false, is_syllable_nucleus: true }
    }

    pub fn punctuation(symbol: u32) -> Self {
        Self { symbol, is_punctuation: true, is_syllable_nucleus: false }
    }
}

/// Append-only phoneme buffer fed by text ingestion.
#[derive(Debug, Clone, Default)]
pub struct PhonemeStream {
    buffer: Vec<Phoneme>,
    /// Buffer position of each non-punctuation phoneme.
    content: Vec<usize>,
    ended: bool,
}

impl PhonemeStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_phonemes(phonemes: &[Phoneme], ended: bool) -> Self {
        let mut s = Self::new();
        s.extend(phonemes).expect("fresh stream accepts appends");
        s.ended = ended;
        s
    }

    pub fn extend(&mut self, phonemes: &[Phoneme]) -> Result<()> {
        if self.ended {
            return Err(Error::Session("phoneme stream already ended".into()));
        }
        for p in phonemes {
            if !p.is_punctuation {
                self.content.push(self.buffer.len());
            }
            self.buffer.push(*p);
        }
        Ok(())
    }

    pub fn end(&mut self) {
        self.ended = true;
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn phonemes(&self) -> &[Phoneme] {
        &self.buffer
    }

    /// Number of non-punctuation phonemes available so far.
    pub fn available(&self) -> usize {
        self.content.len()
    }

    /// Buffer position of the `index`-th non-punctuation phoneme.
    pub fn buffer_position(&self, index: usize) -> Option<usize> {
        self.content.get(index).copied()
    }

    pub fn content_phoneme(&self, index: usize) -> Option<&Phoneme> {
        self.buffer_position(index).map(|i| &self.buffer[i])
    }

    pub fn fully_consumed(&self, state: &AlignmentState) -> bool {
        self.ended && state.cursor >= self.available()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DurationToken {
    pub shift: u8,
    pub ppf: u8,
}

impl DurationToken {
    pub fn new(shift: u8, ppf: u8) -> Result<Self> {
        if shift > 2 || !(1..=2).contains(&ppf) {
            return Err(Error::InvalidDurationToken(format!("shift {shift}, ppf {ppf}")));
        }
        Ok(Self { shift, ppf })
    }

    /// `id = shift * 2 + (ppf - 1)`.
    pub fn id(self) -> usize {
        self.shift as usize * 2 + (self.ppf as usize - 1)
    }

    pub fn from_id(id: usize) -> Result<Self> {
        if id >= DURATION_BINS {
            return Err(Error::InvalidDurationToken(format!("id {id} out of range 0..{DURATION_BINS}")));
        }
        Ok(Self { shift: (id / 2) as u8, ppf: (id % 2 + 1) as u8 })
    }

    pub fn all() -> impl Iterator<Item = DurationToken> {
        (0..DURATION_BINS).map(|id| Self::from_id(id).expect("id in range"))
    }
}

pub fn duration_encode(shift: u8, ppf: u8) -> Result<usize> {
    DurationToken::new(shift, ppf).map(DurationToken::id)
}

pub fn duration_decode(id: usize) -> Result<(u8, u8)> {
    DurationToken::from_id(id).map(|t| (t.shift, t.ppf))
}

/// What a single advance produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameCoverage {
    /// Non-punctuation indices covered by the frame.
    pub covered: Vec<usize>,
    /// Syllable nuclei covered here for the first time.
    pub nuclei: usize,
    /// Phoneme skipped when `shift > ppf`.
    pub gap: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentState {
    cursor: usize,
    frames_emitted: usize,
    assignments: Vec<Vec<usize>>,
    /// One past the highest phoneme covered so far.
    covered_upto: usize,
}

impl AlignmentState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn frames_emitted(&self) -> usize {
        self.frames_emitted
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Emit one frame: cover `[cursor, cursor + ppf - 1]`, then move the
    /// cursor by `shift`. Rejects tokens the legality mask forbids.
    pub fn advance(
        &mut self,
        token: DurationToken,
        stream: &PhonemeStream,
        la_min: usize,
    ) -> Result<FrameCoverage> {
        if !legal_duration_mask(self, stream, la_min)[token.id()] {
            return Err(Error::IllegalDuration { id: token.id(), cursor: self.cursor });
        }
        let start = self.cursor;
        let covered: Vec<usize> = (start..start + token.ppf as usize).collect();
        let nuclei = covered
            .iter()
            .filter(|&&i| i >= self.covered_upto)
            .filter(|&&i| stream.content_phoneme(i).is_some_and(|p| p.is_syllable_nucleus))
            .count();
        self.covered_upto = self.covered_upto.max(start + token.ppf as usize);
        let gap = (token.shift > token.ppf).then_some(start + token.ppf as usize);
        self.cursor += token.shift as usize;
        self.frames_emitted += 1;
        self.assignments.push(covered.clone());
        Ok(FrameCoverage { covered, nuclei, gap })
    }
}

/// Which of the six duration tokens may be emitted from the current state.
///
/// Coverage and the post-shift cursor must stay within the available
/// phonemes. While the stream is still open, a token must also leave at
/// least `la_min` phonemes at or after the new cursor.
pub fn legal_duration_mask(state: &AlignmentState, stream: &PhonemeStream, la_min: usize) -> [bool; DURATION_BINS] {
    let avail = stream.available();
    let mut mask = [false; DURATION_BINS];
    for token in DurationToken::all() {
        let after = state.cursor + token.shift as usize;
        let covers = state.cursor + token.ppf as usize <= avail;
        let in_bounds = after <= avail;
        let look_ahead = stream.is_ended() || avail.saturating_sub(after) >= la_min;
        mask[token.id()] = covers && in_bounds && look_ahead;
    }
    mask
}

/// Whether enough look-ahead is buffered to generate the next frame.
pub fn gate(stream: &PhonemeStream, state: &AlignmentState, la_min: usize) -> bool {
    let remaining = stream.available().saturating_sub(state.cursor);
    remaining >= la_min || (stream.is_ended() && remaining > 0)
}

/// The phonemes the encoder sees: the current phoneme plus up to `la_max`
/// following buffer entries, punctuation included.
pub fn visible_window<'a>(stream: &'a PhonemeStream, state: &AlignmentState, la_max: usize) -> &'a [Phoneme] {
    let buf = stream.phonemes();
    let start = stream.buffer_position(state.cursor).unwrap_or(buf.len());
    let end = (start + la_max + 1).min(buf.len());
    &buf[start..end]
}

/// Encoder positions that survive punctuation removal, in order. The
/// returned vector maps temporal-model index to encoder index.
pub fn strip_punctuation(pt: &[Phoneme]) -> Vec<usize> {
    pt.iter().enumerate().filter(|(_, p)| !p.is_punctuation).map(|(i, _)| i).collect()
}

/// An acoustic prompt: codec frames plus the symbol used to mask its text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub audio_tokens: Vec<FrameTokens>,
    pub unk_symbol: u32,
}

impl PromptSpec {
    pub fn frame_count(&self) -> usize {
        self.audio_tokens.len()
    }
}

/// Frames spanned by `seconds` of prompt audio.
pub fn prompt_frames(seconds: f64) -> usize {
    (seconds * FRAME_RATE_HZ).round() as usize
}

/// One masking symbol per prompt frame.
pub fn mask_prompt(prompt: &PromptSpec) -> Vec<u32> {
    vec![prompt.unk_symbol; prompt.frame_count()]
}
