//! Full-stream speech-token synthesis with dynamic speaking-rate control.
//!
//! Text arrives incrementally, is phonemized into a look-ahead buffer, and a
//! temporal model emits one codec frame every 80 ms: a duration token that
//! drives a monotonic phoneme alignment, a semantic token, and fifteen
//! acoustic tokens. Speaking rate is steered by reweighting the predicted
//! duration distribution toward a target histogram, and every conditioning
//! signal can be guided with classifier-free guidance.
//!
//! Module map:
//! - [`sampler`]: marginalization, distribution matching, guidance and sampling kernels
//! - [`rate`]: target tables, the duration accumulator, schedules, SPS measurement
//! - [`alignment`]: phoneme buffer, alignment state machine, look-ahead gate, prompt masking
//! - [`backbone`]: model backends (seeded toy transformer, scripted oracle)
//! - [`engine`]: the streaming session loop and its event stream
//! - [`bench`]: latency, real-time factor, sweeps and rate-following evaluation
//! - [`service`]: transport-independent session protocol and telemetry

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod backbone;
pub mod bench;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod g2p;
pub mod rate;
pub mod sampler;
pub mod service;

pub use alignment::{AlignmentState, DurationToken, Phoneme, PhonemeStream, PromptSpec};
pub use backbone::{Backend, BackendKind, ModelDims, ScriptedBackend, SpeakerEmbedding, ToyBackend};
pub use engine::{ClockMode, EngineConfig, Session, SessionHandle, StreamEvent};
pub use error::{Error, Result};
pub use rate::{RateSchedule, RateTargetTable, SpsCurve};
pub use sampler::{DurationDistribution, GuidanceConfig, JointLogits, SamplerConfig};

/// Duration tokens: shift in {0, 1, 2} times phonemes-per-frame in {1, 2}.
pub const DURATION_BINS: usize = 6;
/// Codec codebooks per frame: one semantic plus fifteen acoustic.
pub const N_CODEBOOKS: usize = 16;
pub const N_ACOUSTIC: usize = N_CODEBOOKS - 1;
pub const FRAME_RATE_HZ: f64 = 12.5;
pub const FRAME_SECONDS: f64 = 1.0 / FRAME_RATE_HZ;

/// Token ids of one codec frame, semantic codebook first.
pub type FrameTokens = [u32; N_CODEBOOKS];
