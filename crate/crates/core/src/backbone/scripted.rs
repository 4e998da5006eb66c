//! Scripted oracle backend: replays logit tables keyed on engine state.
//!
//! A program is an ordered rule list. The first rule whose condition holds
//! for `(frame, cursor, history digest)` supplies the outputs; a state no
//! rule covers is an error naming that state.

use serde::{Deserialize, Serialize};

use super::{Backend, BackendRequest, CostModel, DtOutput, DtRequest, ModelDims, TtOutput};
use crate::alignment::PromptSpec;
use crate::error::{Error, Result};
use crate::sampler::DurationDistribution;
use crate::{FrameTokens, DURATION_BINS, N_ACOUSTIC};

/// FNV-1a over every token of the history, little-endian.
pub fn history_digest(history: &[FrameTokens]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for frame in history {
        for tok in frame {
            for b in tok.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// All present fields must match. `*_mod` is `[modulus, remainder]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleCondition {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cursor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_mod: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cursor_mod: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<u64>,
}

impl RuleCondition {
    pub fn always() -> Self {
        Self::default()
    }

    pub fn matches(&self, frame: usize, cursor: usize, digest: u64) -> bool {
        let modulo = |m: Option<[usize; 2]>, v: usize| m.is_none_or(|[m, r]| m > 0 && v % m == r);
        self.frame.is_none_or(|f| f == frame)
            && self.cursor.is_none_or(|c| c == cursor)
            && modulo(self.frame_mod, frame)
            && modulo(self.cursor_mod, cursor)
            && self.digest.is_none_or(|d| d == digest)
    }
}

/// Logits one rule produces. The joint head is either explicit (`joint`,
/// one row per duration token) or the outer sum
/// `A[d, n] = duration_logits[d] + semantic_logits[n]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_logits: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic_logits: Option<Vec<f64>>,
    /// Fifteen codebook vectors, or a single vector reused for all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acoustic: Option<Vec<Vec<f64>>>,
}

impl ScriptOutput {
    fn joint_flat(&self, n_vocab: usize) -> Result<Vec<f64>> {
        if let Some(rows) = &self.joint {
            if rows.len() != DURATION_BINS || rows.iter().any(|r| r.len() != n_vocab) {
                return Err(Error::Dimension(format!("joint table must be {DURATION_BINS} x {n_vocab}")));
            }
            return Ok(rows.concat());
        }
        let dur = self.duration_logits.clone().unwrap_or_else(|| vec![0.0; DURATION_BINS]);
        let sem = self.semantic_logits.clone().unwrap_or_else(|| vec![0.0; n_vocab]);
        if dur.len() != DURATION_BINS {
            return Err(Error::LengthMismatch { expected: DURATION_BINS, actual: dur.len() });
        }
        if sem.len() != n_vocab {
            return Err(Error::LengthMismatch { expected: n_vocab, actual: sem.len() });
        }
        Ok(dur.iter().flat_map(|d| sem.iter().map(move |s| d + s)).collect())
    }

    fn acoustic_rows(&self, acoustic_vocab: usize) -> Result<Vec<Vec<f64>>> {
        let rows = match &self.acoustic {
            None => vec![vec![0.0; acoustic_vocab]; N_ACOUSTIC],
            Some(r) if r.len() == 1 => vec![r[0].clone(); N_ACOUSTIC],
            Some(r) if r.len() == N_ACOUSTIC => r.clone(),
            Some(r) => return Err(Error::LengthMismatch { expected: N_ACOUSTIC, actual: r.len() }),
        };
        if let Some(r) = rows.iter().find(|r| r.len() != acoustic_vocab) {
            return Err(Error::LengthMismatch { expected: acoustic_vocab, actual: r.len() });
        }
        Ok(rows)
    }

    fn validate(&self, n_vocab: usize, acoustic_vocab: usize) -> Result<()> {
        let flat = self.joint_flat(n_vocab)?;
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogit { row: i / n_vocab, col: i % n_vocab, value: flat[i] });
        }
        let rows = self.acoustic_rows(acoustic_vocab)?;
        for (r, v) in rows.iter().enumerate() {
            if let Some(c) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLogit { row: r, col: c, value: v[c] });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default)]
    pub when: RuleCondition,
    pub output: ScriptOutput,
    /// Returned to unconditional guidance branches; defaults to `output`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncond: Option<ScriptOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptProgram {
    pub n_vocab: usize,
    pub acoustic_vocab: usize,
    #[serde(default)]
    pub cost: CostModel,
    pub rules: Vec<ScriptRule>,
}

impl ScriptProgram {
    pub fn single(n_vocab: usize, acoustic_vocab: usize, output: ScriptOutput) -> Self {
        Self {
            n_vocab,
            acoustic_vocab,
            cost: CostModel::default(),
            rules: vec![ScriptRule { when: RuleCondition::always(), output, uncond: None }],
        }
    }

    /// Every frame strongly prefers duration token `id`.
    pub fn constant_duration(id: usize, n_vocab: usize) -> Self {
        let mut dur = vec![0.0; DURATION_BINS];
        dur[id] = 60.0;
        Self::single(n_vocab, 4, ScriptOutput { duration_logits: Some(dur), ..Default::default() })
    }

    /// A backend whose marginal duration distribution at temperature `T`
    /// is exactly `p` on every frame. Zero bins get a very low logit.
    pub fn stationary(p: &DurationDistribution, temperature: f64, n_vocab: usize) -> Self {
        let dur = p.probs().iter().map(|&x| if x > 0.0 { temperature * libm::log(x) } else { -1e4 }).collect();
        let sem = (0..n_vocab).map(|n| -(n as f64) * 0.5).collect();
        Self::single(
            n_vocab,
            4,
            ScriptOutput { duration_logits: Some(dur), semantic_logits: Some(sem), ..Default::default() },
        )
    }

    pub fn with_cost(mut self, cost: CostModel) -> Self {
        self.cost = cost;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let program: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        program.validate()?;
        Ok(program)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vocab == 0 || self.acoustic_vocab == 0 {
            return Err(Error::Dimension("vocabularies must be non-empty".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::Config("program has no rules".into()));
        }
        for rule in &self.rules {
            rule.output.validate(self.n_vocab, self.acoustic_vocab)?;
            if let Some(u) = &rule.uncond {
                u.validate(self.n_vocab, self.acoustic_vocab)?;
            }
        }
        Ok(())
    }

    fn lookup(&self, frame: usize, cursor: usize, history: &[FrameTokens], uncond: bool) -> Result<&ScriptOutput> {
        let digest = history_digest(history);
        let rule = self
            .rules
            .iter()
            .find(|r| r.when.matches(frame, cursor, digest))
            .ok_or(Error::ProgramMiss { frame, cursor, digest })?;
        Ok(if uncond { rule.uncond.as_ref().unwrap_or(&rule.output) } else { &rule.output })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    program: ScriptProgram,
    dims: ModelDims,
    prefilled: usize,
}

impl ScriptedBackend {
    pub fn new(program: ScriptProgram) -> Result<Self> {
        program.validate()?;
        let dims = ModelDims {
            n_semantic_vocab: program.n_vocab,
            acoustic_vocab: program.acoustic_vocab,
            embedding: 4,
            heads: 1,
            ..ModelDims::default()
        };
        Ok(Self { program, dims, prefilled: 0 })
    }

    pub fn program(&self) -> &ScriptProgram {
        &self.program
    }

    pub fn prefilled_frames(&self) -> usize {
        self.prefilled
    }
}

impl Backend for ScriptedBackend {
    fn dims(&self) -> &ModelDims {
        &self.dims
    }

    fn cost(&self) -> CostModel {
        self.program.cost
    }

    fn prefill(&mut self, prompt: &PromptSpec, masked_text: &[u32]) -> Result<()> {
        if masked_text.len() != prompt.frame_count() {
            return Err(Error::LengthMismatch { expected: prompt.frame_count(), actual: masked_text.len() });
        }
        self.prefilled = prompt.frame_count();
        Ok(())
    }

    fn tt_step(&mut self, requests: &[BackendRequest<'_>]) -> Result<Vec<TtOutput>> {
        requests
            .iter()
            .map(|r| {
                super::check_window(&self.dims, r.window)?;
                if r.history.len() != r.frame_index {
                    return Err(Error::Dimension(format!(
                        "history length {} != frame index {}",
                        r.history.len(),
                        r.frame_index
                    )));
                }
                let out = self.program.lookup(r.frame_index, r.cursor, r.history, r.drops.any_temporal())?;
                let joint = out.joint_flat(self.program.n_vocab)?;
                Ok(TtOutput { joint, embedding: vec![0.0; self.dims.embedding] })
            })
            .collect()
    }

    fn dt_step(&mut self, requests: &[DtRequest<'_>]) -> Result<Vec<DtOutput>> {
        requests
            .iter()
            .map(|r| {
                if r.embedding.len() != self.dims.embedding {
                    return Err(Error::Dimension(format!("frame embedding width {}", r.embedding.len())));
                }
                let out = self.program.lookup(r.frame_index, r.cursor, r.history, r.speaker_dropped)?;
                Ok(DtOutput { codebooks: out.acoustic_rows(self.program.acoustic_vocab)? })
            })
            .collect()
    }
}
