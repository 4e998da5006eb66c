//! Pre-phonemized text corpora: a line-based file format and synthetic
//! syllable streams with a known phoneme-per-syllable ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::Phoneme;
use crate::error::{Error, Result};
use crate::g2p::PUNCTUATION_BASE;

/// One text token and the phonemes it expands to.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemizedToken {
    pub label: String,
    pub phonemes: Vec<Phoneme>,
}

impl PhonemizedToken {
    pub fn new(phonemes: Vec<Phoneme>) -> Self {
        let label = phonemes.iter().map(|p| p.symbol.to_string()).collect::<Vec<_>>().join("-");
        Self { label, phonemes }
    }
}

/// Parse `symbol_id, is_punct, is_nucleus` lines. A blank line ends a text
/// token; `#` starts a comment.
pub fn parse_phoneme_file(text: &str) -> Result<Vec<PhonemizedToken>> {
    let mut tokens = Vec::new();
    let mut current = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if raw.trim().is_empty() && !current.is_empty() {
                tokens.push(PhonemizedToken::new(std::mem::take(&mut current)));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Parse(format!("line {}: expected `symbol_id, is_punct, is_nucleus`", lineno + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let symbol: u32 = fields[0].parse().map_err(|_| bad())?;
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad()),
        };
        let p = Phoneme::new(symbol, flag(fields[1])?, flag(fields[2])?)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        current.push(p);
    }
    if !current.is_empty() {
        tokens.push(PhonemizedToken::new(current));
    }
    Ok(tokens)
}

pub fn format_phoneme_file(tokens: &[PhonemizedToken]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for p in &t.phonemes {
            out.push_str(&format!("{}, {}, {}\n", p.symbol, p.is_punctuation as u8, p.is_syllable_nucleus as u8));
        }
    }
    out
}

/// Syllables alternate CV and CVC, so the stream averages exactly
/// 2.5 phonemes per syllable with one nucleus each. Words are one to three
/// syllables; every `sentence_words` words end with a period.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub syllables: usize,
    pub seed: u64,
    pub sentence_words: usize,
}

impl SyntheticCorpus {
    pub fn new(syllables: usize, seed: u64) -> Self {
        Self { syllables, seed, sentence_words: 8 }
    }

    /// Word-level tokens.
    pub fn words(&self) -> Vec<PhonemizedToken> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut words = Vec::new();
        let mut made = 0;
        while made < self.syllables {
            let n = rng.gen_range(1..=3usize).min(self.syllables - made);
            let mut ph = Vec::new();
            for _ in 0..n {
                let consonant = |rng: &mut ChaCha8Rng| Phoneme::plain(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
                ph.push(consonant(&mut rng));
                ph.push(Phoneme::nucleus(VOWELS[rng.gen_range(0..VOWELS.len())]));
                if made % 2 == 1 {
                    ph.push(consonant(&mut rng));
                }
                made += 1;
            }
            if self.sentence_words > 0 && (words.len() + 1) % self.sentence_words == 0 {
                ph.push(Phoneme::punctuation(PUNCTUATION_BASE));
            }
            words.push(PhonemizedToken::new(ph));
        }
        words
    }

    /// One token per phoneme; punctuation rides with the phoneme before it.
    pub fn phoneme_tokens(&self) -> Vec<PhonemizedToken> {
        split_per_phoneme(&self.words())
    }

    pub fn phonemes(&self) -> Vec<Phoneme> {
        self.words().into_iter().flat_map(|w| w.phonemes).collect()
    }
}

/// ARPAbet ids of the consonants and vowels used by the synthetic corpus.
const CONSONANTS: [u32; 10] = [6, 8, 13, 14, 19, 20, 21, 22, 26, 30];
const VOWELS: [u32; 5] = [0, 1, 10, 16, 33];

pub fn split_per_phoneme(tokens: &[PhonemizedToken]) -> Vec<PhonemizedToken> {
    let mut out: Vec<PhonemizedToken> = Vec::new();
    for p in tokens.iter().flat_map(|t| t.phonemes.iter()) {
        match out.last_mut() {
            Some(last) if p.is_punctuation => {
                last.phonemes.push(*p);
                last.label.push_str(&format!("-{}", p.symbol));
            }
            _ => out.push(PhonemizedToken::new(vec![*p])),
        }
    }
    out
}

/// Group tokens into chunks of `size`.
pub fn chunk_tokens(tokens: &[PhonemizedToken], size: usize) -> Vec<(PhonemizedToken, usize)> {
    tokens
        .chunks(size.max(1))
        .map(|c| {
            let phonemes = c.iter().flat_map(|t| t.phonemes.iter().copied()).collect();
            let label = c.iter().map(|t| t.label.as_str()).collect::<Vec<_>>().join(" ");
            (PhonemizedToken { label, phonemes }, c.len())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let text = "# demo\n3, 0, 0\n1, 0, 1\n\n100, 1, 0\n7,0,1\n";
        let tokens = parse_phoneme_file(text).unwrap();
        assert_eq!(tokens.len(), 2);
        assert_eq!(tokens[0].phonemes, vec![Phoneme::plain(3), Phoneme::nucleus(1)]);
        assert!(tokens[1].phonemes[0].is_punctuation);
        assert_eq!(parse_phoneme_file(&format_phoneme_file(&tokens)).unwrap(), tokens);
        assert!(parse_phoneme_file("1, 1, 1\n").is_err());
        assert!(parse_phoneme_file("1, 2\n").is_err());
    }

    #[test]
    fn synthetic_ratio() {
        let c = SyntheticCorpus::new(120, 3);
        let ph = c.phonemes();
        let content = ph.iter().filter(|p| !p.is_punctuation).count();
        let nuclei = ph.iter().filter(|p| p.is_syllable_nucleus).count();
        assert_eq!(nuclei, 120);
        assert_eq!(content, 300);
        let per = c.phoneme_tokens();
        assert_eq!(per.len(), 300);
        assert_eq!(c.words(), SyntheticCorpus::new(120, 3).words());
    }

    #[test]
    fn chunking_keeps_phonemes() {
        let words = SyntheticCorpus::new(20, 1).words();
        let chunks = chunk_tokens(&words, 4);
        let total: usize = chunks.iter().map(|(_, n)| n).sum();
        assert_eq!(total, words.len());
        let a: Vec<Phoneme> = chunks.iter().flat_map(|(t, _)| t.phonemes.clone()).collect();
        let b: Vec<Phoneme> = words.iter().flat_map(|t| t.phonemes.clone()).collect();
        assert_eq!(a, b);
    }
}
