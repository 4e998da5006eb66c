//! Seeded toy transformer: a bidirectional phoneme encoder re-run on the
//! visible window every frame, a causal temporal model with one KV cache per
//! guidance branch, and a small depth model over the fifteen acoustic
//! codebooks.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::{add_into, position_code, scaled, uniform, Block, LayerCache, Linear, RmsNorm};
use super::{
    check_window, Backend, BackendRequest, CostModel, DropFlags, DtOutput, DtRequest, ModelDims, SpeakerEmbedding,
    TtOutput,
};
use crate::alignment::{strip_punctuation, Phoneme, PromptSpec};
use crate::error::{Error, Result};
use crate::{FrameTokens, N_ACOUSTIC};

const HEADER_MAGIC: &str = "fullstream-toy-weights v1";

#[derive(Debug, Clone)]
struct Weights {
    phoneme: Vec<f32>,
    nucleus_flag: Vec<f32>,
    punct_flag: Vec<f32>,
    pt: Vec<Block>,
    pt_norm: RmsNorm,
    text_proj: Linear,
    semantic: Vec<f32>,
    acoustic: Vec<f32>,
    bos: Vec<f32>,
    null_audio: Vec<f32>,
    null_text: Vec<f32>,
    tt: Vec<Block>,
    tt_norm: RmsNorm,
    joint_head: Linear,
    dt_in: Linear,
    dt_spk: Linear,
    null_speaker: Vec<f32>,
    dt_semantic: Vec<f32>,
    cb_pos: Vec<f32>,
    dt: Vec<Block>,
    dt_norm: RmsNorm,
    dt_heads: Vec<Linear>,
}

impl Weights {
    fn init(dims: &ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = dims.embedding;
        let null_speaker = {
            let v = uniform(&mut rng, dims.speaker_dim, 1.0);
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
            v.iter().map(|x| x / norm).collect()
        };
        Self {
            phoneme: uniform(&mut rng, dims.phoneme_vocab * e, 1.0),
            nucleus_flag: uniform(&mut rng, e, 0.5),
            punct_flag: uniform(&mut rng, e, 0.5),
            pt: (0..dims.pt_layers).map(|_| Block::init(&mut rng, e, dims.heads)).collect(),
            pt_norm: RmsNorm::new(e),
            text_proj: Linear::init(&mut rng, e, e, 1.0),
            semantic: uniform(&mut rng, dims.n_semantic_vocab * e, 1.0),
            acoustic: uniform(&mut rng, N_ACOUSTIC * dims.acoustic_vocab * e, 0.25),
            bos: uniform(&mut rng, e, 1.0),
            null_audio: uniform(&mut rng, e, 1.0),
            null_text: uniform(&mut rng, e, 1.0),
            tt: (0..dims.tt_layers).map(|_| Block::init(&mut rng, e, dims.heads)).collect(),
            tt_norm: RmsNorm::new(e),
            joint_head: Linear::init(&mut rng, e, dims.joint_width(), 2.0),
            dt_in: Linear::init(&mut rng, e, e, 1.0),
            dt_spk: Linear::init(&mut rng, dims.speaker_dim, e, 2.0),
            null_speaker,
            dt_semantic: uniform(&mut rng, dims.n_semantic_vocab * e, 1.0),
            cb_pos: uniform(&mut rng, N_ACOUSTIC * e, 1.0),
            dt: (0..dims.dt_layers).map(|_| Block::init(&mut rng, e, dims.heads)).collect(),
            dt_norm: RmsNorm::new(e),
            dt_heads: (0..N_ACOUSTIC).map(|_| Linear::init(&mut rng, e, dims.acoustic_vocab, 2.0)).collect(),
        }
    }

    /// Every parameter buffer in a fixed order, for export and import.
    fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out: Vec<&mut Vec<f32>> = vec![&mut self.phoneme, &mut self.nucleus_flag, &mut self.punct_flag];
        for b in &mut self.pt {
            out.extend(b.params_mut());
        }
        out.push(&mut self.pt_norm.w);
        out.push(&mut self.text_proj.w);
        out.push(&mut self.text_proj.b);
        out.extend([&mut self.semantic, &mut self.acoustic, &mut self.bos, &mut self.null_audio, &mut self.null_text]);
        for b in &mut self.tt {
            out.extend(b.params_mut());
        }
        out.push(&mut self.tt_norm.w);
        out.push(&mut self.joint_head.w);
        out.push(&mut self.joint_head.b);
        out.push(&mut self.dt_in.w);
        out.push(&mut self.dt_in.b);
        out.push(&mut self.dt_spk.w);
        out.push(&mut self.dt_spk.b);
        out.extend([&mut self.null_speaker, &mut self.dt_semantic, &mut self.cb_pos]);
        for b in &mut self.dt {
            out.extend(b.params_mut());
        }
        out.push(&mut self.dt_norm.w);
        for h in &mut self.dt_heads {
            out.push(&mut h.w);
            out.push(&mut h.b);
        }
        out
    }
}

fn row(table: &[f32], index: usize, width: usize) -> &[f32] {
    &table[index * width..(index + 1) * width]
}

#[derive(Debug, Clone, Default)]
struct Branch {
    layers: Vec<LayerCache>,
    inputs: Vec<Vec<f32>>,
}

/// The toy backbone. One instance serves one session.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    dims: ModelDims,
    seed: u64,
    cost: CostModel,
    weights: Weights,
    prompt_text: Vec<u32>,
    /// Text conditioning used at each generated position, shared by branches.
    text_log: Vec<Vec<f32>>,
    branches: HashMap<(bool, bool), Branch>,
    memo: Option<(Vec<Phoneme>, Vec<f32>)>,
}

impl ToyBackend {
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let weights = Weights::init(&dims, seed);
        Ok(Self {
            dims,
            seed,
            cost: CostModel::default(),
            weights,
            prompt_text: Vec::new(),
            text_log: Vec::new(),
            branches: HashMap::new(),
            memo: None,
        })
    }

    pub fn with_cost(mut self, cost: CostModel) -> Self {
        self.cost = cost;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The null speaker at the given scale; what a dropped speaker becomes.
    pub fn null_speaker(&self, conditioning_scale: f32) -> SpeakerEmbedding {
        SpeakerEmbedding { vector: self.weights.null_speaker.clone(), conditioning_scale }
    }

    /// Positions processed so far by the branch with these drop flags.
    pub fn branch_len(&self, drops: DropFlags) -> usize {
        self.branches.get(&(drops.text, drops.audio)).map_or(0, |b| b.inputs.len())
    }

    fn check_frame(&self, frame: &FrameTokens) -> Result<()> {
        if frame[0] as usize >= self.dims.n_semantic_vocab {
            return Err(Error::Dimension(format!("semantic token {} outside vocabulary", frame[0])));
        }
        if let Some(t) = frame[1..].iter().find(|&&t| t as usize >= self.dims.acoustic_vocab) {
            return Err(Error::Dimension(format!("acoustic token {t} outside vocabulary")));
        }
        Ok(())
    }

    fn audio_embedding(&self, frame: &FrameTokens) -> Vec<f32> {
        let e = self.dims.embedding;
        let w = &self.weights;
        let mut out = row(&w.semantic, frame[0] as usize, e).to_vec();
        for (k, &tok) in frame[1..].iter().enumerate() {
            add_into(&mut out, row(&w.acoustic, k * self.dims.acoustic_vocab + tok as usize, e));
        }
        out
    }

    fn symbol_embedding(&self, p: &Phoneme) -> Vec<f32> {
        let w = &self.weights;
        let mut x = row(&w.phoneme, p.symbol as usize, self.dims.embedding).to_vec();
        if p.is_syllable_nucleus {
            add_into(&mut x, &w.nucleus_flag);
        }
        if p.is_punctuation {
            add_into(&mut x, &w.punct_flag);
        }
        x
    }

    /// Encode the visible window and reduce it to the temporal model's text
    /// input: the current phoneme plus half of the next one, punctuation
    /// outputs removed.
    fn encode_window(&mut self, window: &[Phoneme]) -> Vec<f32> {
        if let Some((w, text)) = &self.memo {
            if w.as_slice() == window {
                return text.clone();
            }
        }
        let e = self.dims.embedding;
        let mut xs: Vec<Vec<f32>> = window
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut x = self.symbol_embedding(p);
                add_into(&mut x, &position_code(i, e));
                x
            })
            .collect();
        for block in &self.weights.pt {
            xs = block.forward_seq(&xs, false);
        }
        let kept = strip_punctuation(window);
        let text = match kept.as_slice() {
            [] => self.weights.null_text.clone(),
            [first, rest @ ..] => {
                let mut t = self.weights.pt_norm.forward(&xs[*first]);
                if let Some(next) = rest.first() {
                    add_into(&mut t, &scaled(&self.weights.pt_norm.forward(&xs[*next]), 0.5));
                }
                self.weights.text_proj.forward(&t)
            }
        };
        self.memo = Some((window.to_vec(), text.clone()));
        text
    }

    fn unk_text(&self, symbol: u32) -> Vec<f32> {
        let p = Phoneme::plain(symbol);
        self.weights.text_proj.forward(&self.weights.pt_norm.forward(&self.symbol_embedding(&p)))
    }

    fn tt_input(&self, pos: usize, history: &[FrameTokens], drops: DropFlags) -> Result<Vec<f32>> {
        let prompt_len = self.prompt_text.len();
        let mut x = if pos == 0 {
            self.weights.bos.clone()
        } else if drops.audio && pos - 1 < prompt_len {
            self.weights.null_audio.clone()
        } else {
            self.audio_embedding(&history[pos - 1])
        };
        let text = if drops.text {
            self.weights.null_text.clone()
        } else if pos < prompt_len {
            self.unk_text(self.prompt_text[pos])
        } else {
            self.text_log
                .get(pos - prompt_len)
                .cloned()
                .ok_or_else(|| Error::Session(format!("no text conditioning recorded for position {pos}")))?
        };
        add_into(&mut x, &text);
        add_into(&mut x, &position_code(pos, self.dims.embedding));
        Ok(x)
    }

    fn head(&self, hidden: &[f32]) -> TtOutput {
        let embedding = self.weights.tt_norm.forward(hidden);
        let joint = self.weights.joint_head.forward(&embedding).into_iter().map(f64::from).collect();
        TtOutput { joint, embedding }
    }

    /// Run the branch forward until it has processed `upto` positions.
    fn advance_branch(&mut self, drops: DropFlags, history: &[FrameTokens], upto: usize) -> Result<Vec<f32>> {
        let key = (drops.text, drops.audio);
        let mut branch = self.branches.remove(&key).unwrap_or_else(|| Branch {
            layers: vec![LayerCache::default(); self.dims.tt_layers],
            inputs: Vec::new(),
        });
        let mut last = Vec::new();
        let result = (|| {
            if branch.inputs.len() >= upto {
                return Err(Error::Session(format!(
                    "branch already at position {}, asked to reach {upto}",
                    branch.inputs.len()
                )));
            }
            while branch.inputs.len() < upto {
                let pos = branch.inputs.len();
                let x = self.tt_input(pos, history, drops)?;
                let mut h = x.clone();
                for (block, cache) in self.weights.tt.iter().zip(branch.layers.iter_mut()) {
                    h = block.step(&h, cache);
                }
                branch.inputs.push(x);
                last = h;
            }
            Ok(())
        })();
        self.branches.insert(key, branch);
        result.map(|_| last)
    }

    /// From-scratch recomputation of the branch's latest output, ignoring
    /// the KV cache. Used to check cache consistency.
    pub fn recompute_last(&self, drops: DropFlags) -> Option<TtOutput> {
        let branch = self.branches.get(&(drops.text, drops.audio))?;
        if branch.inputs.is_empty() {
            return None;
        }
        let mut xs = branch.inputs.clone();
        for block in &self.weights.tt {
            xs = block.forward_seq(&xs, true);
        }
        Some(self.head(xs.last().expect("non-empty")))
    }

    fn dt_one(&self, req: &DtRequest<'_>) -> Result<DtOutput> {
        let e = self.dims.embedding;
        if req.embedding.len() != e {
            return Err(Error::Dimension(format!("frame embedding width {} != {e}", req.embedding.len())));
        }
        if req.semantic as usize >= self.dims.n_semantic_vocab {
            return Err(Error::Dimension(format!("semantic token {} outside vocabulary", req.semantic)));
        }
        if req.speaker.dim() != self.dims.speaker_dim {
            return Err(Error::Dimension(format!(
                "speaker dim {} != {}",
                req.speaker.dim(),
                self.dims.speaker_dim
            )));
        }
        let w = &self.weights;
        let spk = if req.speaker_dropped { &w.null_speaker[..] } else { req.speaker.vector() };
        let spk = scaled(spk, req.speaker.conditioning_scale);
        let mut base = w.dt_in.forward(req.embedding);
        add_into(&mut base, &w.dt_spk.forward(&spk));
        add_into(&mut base, row(&w.dt_semantic, req.semantic as usize, e));
        let mut xs: Vec<Vec<f32>> = (0..N_ACOUSTIC)
            .map(|k| {
                let mut x = base.clone();
                add_into(&mut x, row(&w.cb_pos, k, e));
                x
            })
            .collect();
        for block in &w.dt {
            xs = block.forward_seq(&xs, true);
        }
        let codebooks = xs
            .iter()
            .zip(&w.dt_heads)
            .map(|(x, head)| head.forward(&w.dt_norm.forward(x)).into_iter().map(f64::from).collect())
            .collect();
        Ok(DtOutput { codebooks })
    }

    /// Write the weights: one text header line, then little-endian f32s.
    pub fn export_weights<W: Write>(&self, mut out: W) -> Result<()> {
        let dims = serde_json::to_string(&self.dims).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(out, "{HEADER_MAGIC} seed={} dims={dims}", self.seed)?;
        let mut copy = self.weights.clone();
        for buf in copy.params_mut() {
            for v in buf.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn import_weights<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Parse("header is not UTF-8".into()))?;
        let rest = header
            .strip_prefix(HEADER_MAGIC)
            .ok_or_else(|| Error::Parse("unrecognized weights header".into()))?
            .trim_start();
        let (seed_part, dims_part) =
            rest.split_once(' ').ok_or_else(|| Error::Parse("header lacks dims".into()))?;
        let seed: u64 = seed_part
            .strip_prefix("seed=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("bad seed field".into()))?;
        let dims: ModelDims = serde_json::from_str(
            dims_part.strip_prefix("dims=").ok_or_else(|| Error::Parse("bad dims field".into()))?,
        )
        .map_err(|e| Error::Parse(e.to_string()))?;
        let mut backend = Self::new(dims, seed)?;
        let mut chunks = bytes[nl + 1..].chunks_exact(4);
        for buf in backend.weights.params_mut() {
            for v in buf.iter_mut() {
                let c = chunks.next().ok_or_else(|| Error::Parse("weights file truncated".into()))?;
                *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        if chunks.next().is_some() || !chunks.remainder().is_empty() {
            return Err(Error::Parse("trailing bytes after weights".into()));
        }
        Ok(backend)
    }
}

impl Backend for ToyBackend {
    fn dims(&self) -> &ModelDims {
        &self.dims
    }

    fn cost(&self) -> CostModel {
        self.cost
    }

    fn prefill(&mut self, prompt: &PromptSpec, masked_text: &[u32]) -> Result<()> {
        if !self.branches.is_empty() || !self.text_log.is_empty() {
            return Err(Error::Session("prefill after generation started".into()));
        }
        if masked_text.len() != prompt.frame_count() {
            return Err(Error::LengthMismatch { expected: prompt.frame_count(), actual: masked_text.len() });
        }
        if let Some(s) = masked_text.iter().find(|&&s| s as usize >= self.dims.phoneme_vocab) {
            return Err(Error::Dimension(format!("mask symbol {s} outside phoneme vocabulary")));
        }
        for frame in &prompt.audio_tokens {
            self.check_frame(frame)?;
        }
        self.prompt_text = masked_text.to_vec();
        Ok(())
    }

    fn tt_step(&mut self, requests: &[BackendRequest<'_>]) -> Result<Vec<TtOutput>> {
        let prompt_len = self.prompt_text.len();
        let mut outputs = Vec::with_capacity(requests.len());
        for req in requests {
            check_window(&self.dims, req.window)?;
            if req.history.len() != req.frame_index {
                return Err(Error::Dimension(format!(
                    "history length {} != frame index {}",
                    req.history.len(),
                    req.frame_index
                )));
            }
            if req.frame_index < prompt_len {
                return Err(Error::Session(format!("frame {} is inside the prompt", req.frame_index)));
            }
            if let Some(frame) = req.history.last() {
                self.check_frame(frame)?;
            }
            let slot = req.frame_index - prompt_len;
            if slot > self.text_log.len() {
                return Err(Error::Session(format!("frame {} skips ahead of the text log", req.frame_index)));
            }
            if slot == self.text_log.len() {
                let text = self.encode_window(req.window);
                self.text_log.push(text);
            }
            let hidden = self.advance_branch(req.drops, req.history, req.frame_index + 1)?;
            outputs.push(self.head(&hidden));
        }
        Ok(outputs)
    }

    fn dt_step(&mut self, requests: &[DtRequest<'_>]) -> Result<Vec<DtOutput>> {
        requests.iter().map(|r| self.dt_one(r)).collect()
    }
}
