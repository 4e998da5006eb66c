//! Numeric kernels for duration marginalization, distribution matching,
//! guided logit combination and token sampling.
//!
//! Everything here is a pure function of its inputs plus an explicit RNG
//! handle. Transcendentals go through `libm` so results are identical on
//! every platform.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Raw joint output of the temporal transformer, viewed as a
/// `d_bins x n_vocab` row-major matrix (duration rows, semantic columns).
#[derive(Debug, Clone, PartialEq)]
pub struct JointLogits {
    d_bins: usize,
    n_vocab: usize,
    values: Vec<f64>,
}

impl JointLogits {
    /// Reshape a flat head output of width `d_bins * n_vocab`. Element
    /// `d * n_vocab + n` becomes row `d`, column `n`.
    pub fn from_flat(d_bins: usize, n_vocab: usize, values: Vec<f64>) -> Result<Self> {
        if d_bins == 0 || n_vocab == 0 {
            return Err(Error::Empty("joint logits need at least one row and column"));
        }
        if values.len() != d_bins * n_vocab {
            return Err(Error::LengthMismatch { expected: d_bins * n_vocab, actual: values.len() });
        }
        let joint = Self { d_bins, n_vocab, values };
        joint.check_finite()?;
        Ok(joint)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d_bins = rows.len();
        let n_vocab = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_vocab) {
            return Err(Error::LengthMismatch { expected: n_vocab, actual: bad.len() });
        }
        Self::from_flat(d_bins, n_vocab, rows.concat())
    }

    pub fn d_bins(&self) -> usize {
        self.d_bins
    }

    pub fn n_vocab(&self) -> usize {
        self.n_vocab
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.values[d * self.n_vocab..(d + 1) * self.n_vocab]
    }

    pub fn get(&self, d: usize, n: usize) -> f64 {
        self.values[d * self.n_vocab + n]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteLogit {
                row: i / self.n_vocab,
                col: i % self.n_vocab,
                value: self.values[i],
            }),
            None => Ok(()),
        }
    }
}

/// A probability histogram over duration tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DurationDistribution(Vec<f64>);

impl DurationDistribution {
    /// Wrap probabilities that already sum to one.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("distribution has no bins"));
        }
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDistribution(format!("bin {i} has value {v}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("bins sum to {sum}")));
        }
        Ok(Self(p))
    }

    /// Normalize non-negative weights into a distribution.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDistribution(format!("weight {i} is {v}")));
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Underflow);
        }
        Self::new(w.iter().map(|v| v / sum).collect())
    }

    pub fn uniform(bins: usize) -> Self {
        Self(vec![1.0 / bins as f64; bins])
    }

    pub fn one_hot(bins: usize, index: usize) -> Self {
        let mut p = vec![0.0; bins];
        p[index] = 1.0;
        Self(p)
    }

    /// Additive smoothing: add `epsilon` to every bin and renormalize, so
    /// every bin is at least `epsilon / (1 + bins * epsilon)`.
    pub fn smoothed(&self, epsilon: f64) -> Self {
        let total = 1.0 + epsilon * self.0.len() as f64;
        Self(self.0.iter().map(|p| (p + epsilon) / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Zero out bins where `allowed` is false and renormalize.
    pub fn masked(&self, allowed: &[bool]) -> Result<Self> {
        if allowed.len() != self.0.len() {
            return Err(Error::LengthMismatch { expected: self.0.len(), actual: allowed.len() });
        }
        let w: Vec<f64> = self.0.iter().zip(allowed).map(|(p, ok)| if *ok { *p } else { 0.0 }).collect();
        Self::from_weights(&w)
    }
}

impl TryFrom<Vec<f64>> for DurationDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DurationDistribution> for Vec<f64> {
    fn from(d: DurationDistribution) -> Self {
        d.0
    }
}

/// Positive multiplicative weights for distribution matching.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite() || **v <= 0.0) {
            return Err(Error::InvalidDistribution(format!("weight {i} is {v}")));
        }
        Ok(Self(w))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub beta: f64,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { temperature: 0.9, top_p: 0.9, top_k: 5, beta: 5.0, rng_seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub gamma_temp: f64,
    pub gamma_depth: f64,
    pub text_cfg_enabled: bool,
    pub audio_cfg_enabled: bool,
    pub speaker_cfg_enabled: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            gamma_temp: 1.5,
            gamma_depth: 3.0,
            text_cfg_enabled: true,
            audio_cfg_enabled: true,
            speaker_cfg_enabled: true,
        }
    }
}

impl GuidanceConfig {
    pub fn disabled() -> Self {
        Self {
            text_cfg_enabled: false,
            audio_cfg_enabled: false,
            speaker_cfg_enabled: false,
            ..Self::default()
        }
    }

    pub fn temporal_enabled(&self) -> bool {
        self.text_cfg_enabled || self.audio_cfg_enabled
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma_temp.is_finite() || !self.gamma_depth.is_finite() {
            return Err(Error::Config("guidance scales must be finite".into()));
        }
        Ok(())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|x| libm::exp(x - max)).sum();
    max + libm::log(sum)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| libm::exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Marginalize the joint head over the semantic vocabulary:
/// `softmax_d( logsumexp_n(A[d, n]) / T )`.
pub fn marginal_duration(joint: &JointLogits, temperature: f64) -> Result<DurationDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    joint.check_finite()?;
    let scaled: Vec<f64> = (0..joint.d_bins).map(|d| log_sum_exp(joint.row(d)) / temperature).collect();
    DurationDistribution::new(softmax(&scaled))
}

/// Matching weights `exp(beta * (log10 target - log10 acc))`, evaluated in the
/// log domain. Both histograms must be strictly positive.
pub fn matching_weights(
    target: &DurationDistribution,
    acc: &DurationDistribution,
    beta: f64,
) -> Result<WeightVector> {
    if target.len() != acc.len() {
        return Err(Error::LengthMismatch { expected: target.len(), actual: acc.len() });
    }
    for p in [target, acc] {
        if let Some((bin, &value)) = p.probs().iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::NonPositiveBin { bin, value });
        }
    }
    let w = target
        .probs()
        .iter()
        .zip(acc.probs())
        .map(|(t, a)| libm::exp(beta * (libm::log10(*t) - libm::log10(*a))))
        .collect();
    WeightVector::new(w)
}

/// Reweight the current prediction and renormalize.
pub fn apply_matching(current: &DurationDistribution, weights: &WeightVector) -> Result<DurationDistribution> {
    let w = weights.values();
    if w.len() != current.len() {
        return Err(Error::LengthMismatch { expected: current.len(), actual: w.len() });
    }
    // Equal weights cancel in the normalization.
    if w.iter().all(|x| *x == w[0]) {
        return Ok(current.clone());
    }
    let unnorm: Vec<f64> = current.probs().iter().zip(w).map(|(p, w)| p * w).collect();
    let denom: f64 = unnorm.iter().sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Underflow);
    }
    DurationDistribution::new(unnorm.into_iter().map(|x| x / denom).collect())
}

/// Indices sorted by descending value, ties broken by lowest index.
fn ranked(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// The nucleus: smallest prefix of the ranked bins whose cumulative mass
/// reaches `top_p`. Falls back to every positive bin when rounding keeps
/// the running sum just below `top_p`.
pub fn nucleus_support(dist: &DurationDistribution, top_p: f64) -> Vec<usize> {
    let p = dist.probs();
    let mut cum = 0.0;
    let mut kept = Vec::new();
    for i in ranked(p) {
        if p[i] <= 0.0 {
            break;
        }
        kept.push(i);
        cum += p[i];
        if cum >= top_p {
            break;
        }
    }
    kept
}

fn draw_from<R: Rng + ?Sized>(indices: &[usize], weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = indices.iter().map(|&i| weights[i]).sum();
    let mut r = rng.gen::<f64>() * total;
    for &i in indices {
        if r < weights[i] {
            return i;
        }
        r -= weights[i];
    }
    // Only reachable through rounding in the subtraction chain.
    *indices.iter().rev().find(|&&i| weights[i] > 0.0).unwrap_or(&indices[0])
}

/// Nucleus (top-p) sampling of a duration token.
pub fn sample_duration<R: Rng + ?Sized>(dist: &DurationDistribution, top_p: f64, rng: &mut R) -> usize {
    let support = nucleus_support(dist, top_p);
    draw_from(&support, dist.probs(), rng)
}

/// Top-k sampling at temperature `T` over row `d` of the joint logits.
pub fn sample_semantic<R: Rng + ?Sized>(
    joint: &JointLogits,
    d: usize,
    top_k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<usize> {
    if d >= joint.d_bins {
        return Err(Error::Dimension(format!("duration row {d} out of range 0..{}", joint.d_bins)));
    }
    if top_k == 0 || !(temperature > 0.0) {
        return Err(Error::Config("top_k >= 1 and temperature > 0 required".into()));
    }
    let row = joint.row(d);
    let mut top = ranked(row);
    top.truncate(top_k);
    let probs = top_k_probs(row, &top, temperature);
    let mut weights = vec![0.0; row.len()];
    for (&i, p) in top.iter().zip(probs) {
        weights[i] = p;
    }
    Ok(draw_from(&top, &weights, rng))
}

fn top_k_probs(row: &[f64], top: &[usize], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = top.iter().map(|&i| row[i] / temperature).collect();
    softmax(&scaled)
}

/// Classifier-free guidance in logit space, `uncond + gamma * (cond - uncond)`,
/// written as `gamma * cond + (1 - gamma) * uncond` so that `gamma = 1` and
/// `gamma = 0` reproduce the branches bit for bit.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::LengthMismatch { expected: cond.len(), actual: uncond.len() });
    }
    if let Some(i) = cond.iter().chain(uncond).position(|v| !v.is_finite()) {
        let col = i % cond.len();
        let value = if i < cond.len() { cond[col] } else { uncond[col] };
        return Err(Error::NonFiniteLogit { row: i / cond.len(), col, value });
    }
    Ok(cond.iter().zip(uncond).map(|(c, u)| gamma * c + (1.0 - gamma) * u).collect())
}

/// Greedy decoding of each acoustic codebook; ties go to the lowest index.
pub fn sample_acoustic(codebook_logits: &[Vec<f64>]) -> Result<Vec<usize>> {
    codebook_logits
        .iter()
        .map(|v| {
            if v.is_empty() {
                return Err(Error::Empty("acoustic logit vector"));
            }
            let mut best = 0;
            for (i, x) in v.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFiniteLogit { row: 0, col: i, value: *x });
                }
                if *x > v[best] {
                    best = i;
                }
            }
            Ok(best)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> DurationDistribution {
        DurationDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn constant_logits_give_uniform_marginal() {
        let joint = JointLogits::from_flat(6, 10, vec![3.25; 60]).unwrap();
        let p = marginal_duration(&joint, 0.9).unwrap();
        for v in p.probs() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_bin_marginal_matches_reference() {
        let joint = JointLogits::from_rows(&[vec![0.0], vec![0.9]]).unwrap();
        let p = marginal_duration(&joint, 0.9).unwrap();
        // softmax([0, 1]) evaluated to 12 digits.
        assert!((p.probs()[0] - 0.268941421370).abs() < 1e-11);
        assert!((p.probs()[1] - 0.731058578630).abs() < 1e-11);
    }

    #[test]
    fn non_finite_cell_is_named() {
        let mut v = vec![0.0; 12];
        v[7] = f64::NAN;
        let err = JointLogits::from_flat(2, 6, v).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLogit { row: 1, col: 1, .. }));
    }

    #[test]
    fn matching_weights_identity_and_closed_form() {
        let p = dist(&[0.1, 0.2, 0.3, 0.1, 0.2, 0.1]);
        let w = matching_weights(&p, &p, 5.0).unwrap();
        assert!(w.values().iter().all(|x| *x == 1.0));

        let acc = dist(&[0.01, 0.198, 0.198, 0.198, 0.198, 0.198]);
        let target = dist(&[0.1, 0.18, 0.18, 0.18, 0.18, 0.18]);
        let w = matching_weights(&target, &acc, 5.0).unwrap();
        assert!((w.values()[0] - 148.4131591025766).abs() < 1e-9);
    }

    #[test]
    fn matching_rejects_zero_bins() {
        let p = dist(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let u = DurationDistribution::uniform(6);
        assert!(matches!(matching_weights(&p, &u, 5.0), Err(Error::NonPositiveBin { bin: 2, .. })));
        assert!(matches!(matching_weights(&u, &p, 5.0), Err(Error::NonPositiveBin { bin: 2, .. })));
    }

    #[test]
    fn apply_matching_cases() {
        let p = dist(&[0.1, 0.2, 0.3, 0.1, 0.2, 0.1]);
        let ones = WeightVector::new(vec![1.0; 6]).unwrap();
        assert_eq!(apply_matching(&p, &ones).unwrap(), p);

        let e5 = libm::exp(5.0);
        let w = WeightVector::new(vec![e5, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let out = apply_matching(&DurationDistribution::uniform(6), &w).unwrap();
        assert!((out.probs()[0] - 0.967408).abs() < 1e-6);
        assert!((out.probs()[0] - e5 / (e5 + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn apply_matching_underflow_is_rejected() {
        let p = dist(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let tiny = 5e-324;
        let w = WeightVector::new(vec![tiny, tiny, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(apply_matching(&p, &w), Err(Error::Underflow));
    }

    #[test]
    fn nucleus_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one_hot = DurationDistribution::one_hot(6, 4);
        for _ in 0..1000 {
            assert_eq!(sample_duration(&one_hot, 0.9, &mut rng), 4);
        }
        let half = dist(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(nucleus_support(&half, 0.9), vec![0, 1]);
        for _ in 0..1000 {
            assert!(sample_duration(&half, 0.9, &mut rng) < 2);
        }
    }

    #[test]
    fn nucleus_tie_breaks_by_index() {
        let p = dist(&[0.2, 0.2, 0.2, 0.2, 0.1, 0.1]);
        assert_eq!(nucleus_support(&p, 0.3), vec![0, 1]);
    }

    #[test]
    fn top_k_one_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let joint = JointLogits::from_rows(&[vec![0.3, 2.0, 2.0, -1.0], vec![5.0, 0.0, 0.0, 0.0]]).unwrap();
        for _ in 0..200 {
            assert_eq!(sample_semantic(&joint, 0, 1, 0.9, &mut rng).unwrap(), 1);
            assert_eq!(sample_semantic(&joint, 1, 1, 0.9, &mut rng).unwrap(), 0);
        }
        assert!(sample_semantic(&joint, 2, 1, 0.9, &mut rng).is_err());
    }

    #[test]
    fn dominated_row_is_almost_always_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut row = vec![0.0; 32];
        row[17] = 100.0;
        let joint = JointLogits::from_rows(&[row]).unwrap();
        let hits = (0..10_000)
            .filter(|_| sample_semantic(&joint, 0, 5, 0.9, &mut rng).unwrap() == 17)
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn cfg_identities() {
        let c = [0.1, -2.5, 3.75];
        let u = [0.7, 1.0, -4.0];
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.to_vec());
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.to_vec());
        assert_eq!(cfg_combine(&[1.0, 0.0], &[0.0, 0.0], 1.5).unwrap(), vec![1.5, 0.0]);
        assert!(matches!(cfg_combine(&c, &u[..2], 1.0), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn cfg_argmax_stable_for_gamma_at_least_one() {
        for g in [1.0, 1.5, 2.0, 3.0, 10.0] {
            let out = cfg_combine(&[1.0, 0.0], &[0.0, 0.0], g).unwrap();
            assert_eq!(sample_acoustic(&[out]).unwrap(), vec![0]);
        }
    }

    #[test]
    fn acoustic_argmax_and_ties() {
        let v = vec![vec![0.0, 3.0, 1.0], vec![2.0, 2.0, 2.0], vec![-1.0, -3.0, -0.5]];
        assert_eq!(sample_acoustic(&v).unwrap(), vec![1, 0, 2]);
        assert!(sample_acoustic(&[vec![]]).is_err());
    }

    #[test]
    fn smoothing_floor() {
        let p = DurationDistribution::one_hot(6, 0).smoothed(1e-4);
        let floor = 1e-4 / (1.0 + 6e-4);
        assert!(p.probs()[1..].iter().all(|v| (*v - floor).abs() < 1e-18));
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig { top_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { top_k: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
    }
}
