//! Brute-force reference implementations and shared fixtures. Written
//! independently of the library: no log-sum-exp tricks, no shared helpers.
#![allow(dead_code)]

use fullstream_core::alignment::Phoneme;
use fullstream_core::corpus::PhonemizedToken;
use fullstream_core::DURATION_BINS;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `P(d) = (sum_n e^{A[d,n]})^{1/T} / sum_d' (...)`, computed after
/// subtracting the global maximum once.
pub fn marginal(rows: &[Vec<f64>], t: f64) -> Vec<f64> {
    let m = rows.iter().flatten().copied().fold(f64::MIN, f64::max);
    let mass: Vec<f64> = rows.iter().map(|r| r.iter().map(|a| (a - m).exp()).sum::<f64>()).collect();
    // Raise to 1/T relative to the largest row to stay in range.
    let top = mass.iter().copied().fold(0.0, f64::max);
    let powered: Vec<f64> = mass.iter().map(|x| (x / top).powf(1.0 / t)).collect();
    let z: f64 = powered.iter().sum();
    powered.iter().map(|x| x / z).collect()
}

/// `(P_target / P_acc)^(beta / ln 10)`.
pub fn weights(target: &[f64], acc: &[f64], beta: f64) -> Vec<f64> {
    target.iter().zip(acc).map(|(t, a)| (t / a).powf(beta / std::f64::consts::LN_10)).collect()
}

pub fn reweight(p: &[f64], w: &[f64]) -> Vec<f64> {
    let z: f64 = p.iter().zip(w).map(|(a, b)| a * b).sum();
    p.iter().zip(w).map(|(a, b)| a * b / z).collect()
}

/// Legal tokens by walking the covered phonemes one at a time.
pub fn legal_mask(cursor: usize, avail: usize, ended: bool, la_min: usize) -> [bool; DURATION_BINS] {
    let mut mask = [false; DURATION_BINS];
    for shift in 0..=2usize {
        for ppf in 1..=2usize {
            let id = shift * 2 + ppf - 1;
            let mut ok = true;
            for k in 0..ppf {
                if cursor + k >= avail {
                    ok = false;
                }
            }
            if cursor + shift > avail {
                ok = false;
            }
            if !ended {
                let mut ahead = 0;
                let mut j = cursor + shift;
                while j < avail {
                    ahead += 1;
                    j += 1;
                }
                if ahead < la_min {
                    ok = false;
                }
            }
            mask[id] = ok;
        }
    }
    mask
}

/// Gate by counting buffered phonemes past the cursor.
pub fn gate(cursor: usize, avail: usize, ended: bool, la_min: usize) -> bool {
    let mut remaining = 0;
    for _ in cursor..avail {
        remaining += 1;
    }
    remaining >= la_min || (ended && remaining > 0)
}

/// The nucleus by exhaustive search: among all subsets whose mass reaches
/// `top_p`, the smallest, then the heaviest. Returned renormalized.
pub fn nucleus(p: &[f64], top_p: f64) -> Vec<f64> {
    let n = p.len();
    let mut best: Option<(usize, f64, u32)> = None;
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as usize;
        let mass: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| p[i]).sum();
        if mass + 1e-12 < top_p {
            continue;
        }
        let better = match best {
            None => true,
            Some((s, m, _)) => size < s || (size == s && mass > m + 1e-15),
        };
        if better {
            best = Some((size, mass, mask));
        }
    }
    let (_, mass, mask) = best.expect("full set always qualifies");
    (0..n).map(|i| if mask >> i & 1 == 1 { p[i] / mass } else { 0.0 }).collect()
}

/// The k largest logits, softmaxed at temperature `t`; zero elsewhere.
pub fn top_k(row: &[f64], k: usize, t: f64) -> Vec<f64> {
    let mut keep = vec![false; row.len()];
    for _ in 0..k.min(row.len()) {
        let mut arg = None;
        for (i, v) in row.iter().enumerate() {
            if !keep[i] && arg.is_none_or(|a: usize| *v > row[a]) {
                arg = Some(i);
            }
        }
        keep[arg.unwrap()] = true;
    }
    let w: Vec<f64> = row.iter().zip(&keep).map(|(v, k)| if *k { (v / t).exp() } else { 0.0 }).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Chi-square goodness of fit over the bins with positive expectation.
/// Returns the p-value; a draw in a zero-probability bin returns 0.
pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            if c > 0 {
                return 0.0;
            }
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        dof += 1;
    }
    if dof <= 1 {
        return 1.0;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}

/// Textbook two-pass Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

/// Strictly positive random distribution (normalized exponentials).
pub fn random_dist(rng: &mut impl Rng, bins: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..bins).map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln() + floor).collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|x| x / z).collect()
}

/// `n` single-phoneme tokens, every other one a nucleus.
pub fn phoneme_tokens(n: usize) -> Vec<PhonemizedToken> {
    (0..n)
        .map(|i| {
            let p = if i % 2 == 1 { Phoneme::nucleus(1 + (i % 30) as u32) } else { Phoneme::plain(1 + (i % 30) as u32) };
            PhonemizedToken::new(vec![p])
        })
        .collect()
}

/// 64-bit FNV-1a, for freezing event logs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
