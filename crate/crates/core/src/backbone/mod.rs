//! Pluggable model backends.
//!
//! A backend owns the incremental state of the temporal and depth models.
//! The engine asks it for the joint duration x semantic logits of the next
//! frame ([`Backend::tt_step`]) and for the fifteen acoustic codebook logits
//! given the chosen semantic token ([`Backend::dt_step`]). Both calls take a
//! batch so the conditional and unconditional guidance branches can be
//! evaluated together.

mod nn;
mod scripted;
mod toy;

use serde::{Deserialize, Serialize};

use crate::alignment::{Phoneme, PromptSpec};
use crate::error::{Error, Result};
use crate::sampler::GuidanceConfig;
use crate::{FrameTokens, DURATION_BINS, FRAME_RATE_HZ, N_CODEBOOKS};

pub use scripted::{history_digest, RuleCondition, ScriptOutput, ScriptProgram, ScriptRule, ScriptedBackend};
pub use toy::ToyBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub n_semantic_vocab: usize,
    pub d_bins: usize,
    pub n_codebooks: usize,
    pub acoustic_vocab: usize,
    pub embedding: usize,
    pub pt_layers: usize,
    pub tt_layers: usize,
    pub dt_layers: usize,
    pub heads: usize,
    pub frame_rate: f64,
    pub phoneme_vocab: usize,
    pub speaker_dim: usize,
    /// Longest phoneme window the encoder accepts.
    pub max_window: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            n_semantic_vocab: 64,
            d_bins: DURATION_BINS,
            n_codebooks: N_CODEBOOKS,
            acoustic_vocab: 64,
            embedding: 64,
            pt_layers: 2,
            tt_layers: 2,
            dt_layers: 1,
            heads: 4,
            frame_rate: FRAME_RATE_HZ,
            phoneme_vocab: 128,
            speaker_dim: 32,
            max_window: 64,
        }
    }
}

impl ModelDims {
    pub fn joint_width(&self) -> usize {
        self.n_semantic_vocab * self.d_bins
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_semantic_vocab", self.n_semantic_vocab),
            ("acoustic_vocab", self.acoustic_vocab),
            ("embedding", self.embedding),
            ("heads", self.heads),
            ("phoneme_vocab", self.phoneme_vocab),
            ("speaker_dim", self.speaker_dim),
            ("max_window", self.max_window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Dimension(format!("{name} must be positive")));
        }
        if self.d_bins != DURATION_BINS {
            return Err(Error::Dimension(format!("d_bins must be {DURATION_BINS}, got {}", self.d_bins)));
        }
        if self.n_codebooks != N_CODEBOOKS {
            return Err(Error::Dimension(format!("n_codebooks must be {N_CODEBOOKS}, got {}", self.n_codebooks)));
        }
        if !self.embedding.is_multiple_of(self.heads) {
            return Err(Error::Dimension("embedding must be divisible by heads".into()));
        }
        Ok(())
    }
}

/// Synthetic per-frame compute costs used by the simulated clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub tt_ms: f64,
    pub dt_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { tt_ms: 3.0, dt_ms: 2.0 }
    }
}

impl CostModel {
    pub fn zero() -> Self {
        Self { tt_ms: 0.0, dt_ms: 0.0 }
    }

    pub fn frame_ms(&self) -> f64 {
        self.tt_ms + self.dt_ms
    }
}

/// Speaker conditioning vector, unit-normalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    vector: Vec<f32>,
    pub conditioning_scale: f32,
}

impl SpeakerEmbedding {
    pub const DEFAULT_SCALE: f32 = 1.5;

    pub fn new(vector: Vec<f32>, conditioning_scale: f32) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) || !conditioning_scale.is_finite() {
            return Err(Error::Dimension("speaker embedding must be finite".into()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm == 0.0 {
            return Err(Error::Dimension("speaker embedding has zero norm".into()));
        }
        Ok(Self { vector: vector.iter().map(|v| v / norm).collect(), conditioning_scale })
    }

    /// Deterministic pseudo-random speaker for demos and tests.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Self::new(v, Self::DEFAULT_SCALE).expect("random vector is non-zero")
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Which conditionings a guidance branch replaces with their null embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DropFlags {
    pub text: bool,
    pub audio: bool,
    pub speaker: bool,
}

impl DropFlags {
    pub fn any_temporal(&self) -> bool {
        self.text || self.audio
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    /// Encoder input: current phoneme plus look-ahead, punctuation included.
    pub window: &'a [Phoneme],
    /// Every frame so far, prompt frames first.
    pub history: &'a [FrameTokens],
    pub speaker: &'a SpeakerEmbedding,
    pub drops: DropFlags,
    /// Absolute frame position; equals `history.len()`.
    pub frame_index: usize,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtOutput {
    /// Flat joint head of width `n_semantic_vocab * d_bins`, duration-major.
    pub joint: Vec<f64>,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
pub struct DtRequest<'a> {
    pub embedding: &'a [f32],
    pub semantic: u32,
    pub speaker: &'a SpeakerEmbedding,
    pub speaker_dropped: bool,
    pub history: &'a [FrameTokens],
    pub frame_index: usize,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtOutput {
    /// One logit vector per acoustic codebook.
    pub codebooks: Vec<Vec<f64>>,
}

pub trait Backend: Send {
    fn dims(&self) -> &ModelDims;

    fn cost(&self) -> CostModel;

    /// Push prompt frames, conditioned on masked text, ahead of generation.
    fn prefill(&mut self, prompt: &PromptSpec, masked_text: &[u32]) -> Result<()>;

    fn tt_step(&mut self, requests: &[BackendRequest<'_>]) -> Result<Vec<TtOutput>>;

    fn dt_step(&mut self, requests: &[DtRequest<'_>]) -> Result<Vec<DtOutput>>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn dims(&self) -> &ModelDims {
        (**self).dims()
    }
    fn cost(&self) -> CostModel {
        (**self).cost()
    }
    fn prefill(&mut self, prompt: &PromptSpec, masked_text: &[u32]) -> Result<()> {
        (**self).prefill(prompt, masked_text)
    }
    fn tt_step(&mut self, requests: &[BackendRequest<'_>]) -> Result<Vec<TtOutput>> {
        (**self).tt_step(requests)
    }
    fn dt_step(&mut self, requests: &[DtRequest<'_>]) -> Result<Vec<DtOutput>> {
        (**self).dt_step(requests)
    }
}

/// Split a request into its conditional and unconditional guidance halves.
/// The unconditional half drops every conditioning whose guidance is enabled.
pub fn make_cfg_batch<'a>(
    request: &BackendRequest<'a>,
    guidance: &GuidanceConfig,
) -> (BackendRequest<'a>, BackendRequest<'a>) {
    let cond = *request;
    let mut uncond = *request;
    uncond.drops = DropFlags {
        text: request.drops.text || guidance.text_cfg_enabled,
        audio: request.drops.audio || guidance.audio_cfg_enabled,
        speaker: request.drops.speaker || guidance.speaker_cfg_enabled,
    };
    (cond, uncond)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    Scripted,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackendKind::Toy),
            "scripted" => Ok(BackendKind::Scripted),
            other => Err(Error::Parse(format!("unknown backend {other:?}"))),
        }
    }
}

pub(crate) fn check_window(dims: &ModelDims, window: &[Phoneme]) -> Result<()> {
    if window.len() > dims.max_window {
        return Err(Error::Dimension(format!("window of {} exceeds {}", window.len(), dims.max_window)));
    }
    if let Some(p) = window.iter().find(|p| p.symbol as usize >= dims.phoneme_vocab) {
        return Err(Error::Dimension(format!("phoneme symbol {} outside vocabulary {}", p.symbol, dims.phoneme_vocab)));
    }
    Ok(())
}
