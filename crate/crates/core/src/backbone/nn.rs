//! Minimal f32 transformer pieces for the toy backbone. Inference only.

use rand::Rng;

pub(crate) fn uniform<R: Rng>(rng: &mut R, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * scale).collect()
}

pub(crate) fn add_into(acc: &mut [f32], x: &[f32]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub(crate) fn scaled(x: &[f32], s: f32) -> Vec<f32> {
    x.iter().map(|v| v * s).collect()
}

/// Sinusoidal position code.
pub(crate) fn position_code(pos: usize, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|i| {
            let rate = libm::powf(10_000.0, -((i / 2 * 2) as f32) / dim as f32);
            let angle = pos as f32 * rate;
            if i % 2 == 0 {
                libm::sinf(angle)
            } else {
                libm::cosf(angle)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl Linear {
    pub fn init<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize, gain: f32) -> Self {
        let scale = gain / (in_dim as f32).sqrt();
        Self { in_dim, out_dim, w: uniform(rng, in_dim * out_dim, scale), b: vec![0.0; out_dim] }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                row.iter().zip(x).fold(self.b[o], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RmsNorm {
    pub w: Vec<f32>,
}

impl RmsNorm {
    pub fn new(dim: usize) -> Self {
        Self { w: vec![1.0; dim] }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
        let inv = 1.0 / (ms + 1e-5).sqrt();
        x.iter().zip(&self.w).map(|(v, w)| v * inv * w).collect()
    }
}

fn silu(x: f32) -> f32 {
    x / (1.0 + libm::expf(-x))
}

/// Keys and values of earlier positions for one layer.
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerCache {
    pub keys: Vec<Vec<f32>>,
    pub values: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    heads: usize,
    norm1: RmsNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    norm2: RmsNorm,
    up: Linear,
    down: Linear,
}

impl Block {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, heads: usize) -> Self {
        Self {
            heads,
            norm1: RmsNorm::new(dim),
            wq: Linear::init(rng, dim, dim, 1.0),
            wk: Linear::init(rng, dim, dim, 1.0),
            wv: Linear::init(rng, dim, dim, 1.0),
            wo: Linear::init(rng, dim, dim, 0.5),
            norm2: RmsNorm::new(dim),
            up: Linear::init(rng, dim, 2 * dim, 1.0),
            down: Linear::init(rng, 2 * dim, dim, 0.5),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = vec![&mut self.norm1.w];
        for l in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo] {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.norm2.w);
        for l in [&mut self.up, &mut self.down] {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    /// Multi-head attention of one query over the given keys and values.
    fn attend(&self, q: &[f32], keys: &[Vec<f32>], values: &[Vec<f32>]) -> Vec<f32> {
        let dim = q.len();
        let hd = dim / self.heads;
        let inv_sqrt = 1.0 / (hd as f32).sqrt();
        let mut out = vec![0.0f32; dim];
        for h in 0..self.heads {
            let r = h * hd..(h + 1) * hd;
            let scores: Vec<f32> = keys
                .iter()
                .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f32>() * inv_sqrt)
                .collect();
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = scores.iter().map(|s| libm::expf(s - max)).collect();
            let z: f32 = exps.iter().sum();
            for (e, v) in exps.iter().zip(values) {
                let a = e / z;
                for (o, x) in out[r.clone()].iter_mut().zip(&v[r.clone()]) {
                    *o += a * x;
                }
            }
        }
        out
    }

    fn feed_forward(&self, x: &[f32], attn: &[f32]) -> Vec<f32> {
        let mut h = x.to_vec();
        add_into(&mut h, &self.wo.forward(attn));
        let up: Vec<f32> = self.up.forward(&self.norm2.forward(&h)).into_iter().map(silu).collect();
        add_into(&mut h, &self.down.forward(&up));
        h
    }

    /// Process one new position, appending its key and value to `cache`.
    pub fn step(&self, x: &[f32], cache: &mut LayerCache) -> Vec<f32> {
        let n = self.norm1.forward(x);
        let q = self.wq.forward(&n);
        cache.keys.push(self.wk.forward(&n));
        cache.values.push(self.wv.forward(&n));
        let attn = self.attend(&q, &cache.keys, &cache.values);
        self.feed_forward(x, &attn)
    }

    /// Process a whole sequence at once, causally or bidirectionally.
    pub fn forward_seq(&self, xs: &[Vec<f32>], causal: bool) -> Vec<Vec<f32>> {
        let normed: Vec<Vec<f32>> = xs.iter().map(|x| self.norm1.forward(x)).collect();
        let keys: Vec<Vec<f32>> = normed.iter().map(|n| self.wk.forward(n)).collect();
        let values: Vec<Vec<f32>> = normed.iter().map(|n| self.wv.forward(n)).collect();
        xs.iter()
            .zip(&normed)
            .enumerate()
            .map(|(i, (x, n))| {
                let q = self.wq.forward(n);
                let upto = if causal { i + 1 } else { xs.len() };
                let attn = self.attend(&q, &keys[..upto], &values[..upto]);
                self.feed_forward(x, &attn)
            })
            .collect()
    }
}
