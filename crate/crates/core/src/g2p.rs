//! Grapheme-to-phoneme conversion for demos: a small pronunciation
//! dictionary with a letter-by-letter fallback. Tests use pre-phonemized
//! input instead.

use std::collections::HashMap;

use crate::alignment::Phoneme;

/// A text token in, a phoneme list out.
pub trait GraphemeToPhoneme: Send {
    fn phonemize(&self, token: &str) -> Vec<Phoneme>;
}

/// ARPAbet symbols; index = symbol id.
pub const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH",
    "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

const PUNCTUATION: &str = ".,!?;:-";
/// First symbol id used for punctuation marks.
pub const PUNCTUATION_BASE: u32 = 100;
/// Symbol id reserved for masked prompt text.
pub const UNK_SYMBOL: u32 = 127;

fn symbol_id(arpa: &str) -> Option<u32> {
    ARPABET.iter().position(|s| *s == arpa).map(|i| i as u32)
}

fn is_vowel_symbol(arpa: &str) -> bool {
    matches!(
        arpa,
        "AA" | "AE" | "AH" | "AO" | "AW" | "AY" | "EH" | "ER" | "EY" | "IH" | "IY" | "OW" | "OY" | "UH" | "UW"
    )
}

const DICTIONARY: &[(&str, &str)] = &[
    ("a", "AH"),
    ("and", "AE N D"),
    ("are", "AA R"),
    ("be", "B IY"),
    ("can", "K AE N"),
    ("for", "F AO R"),
    ("hello", "HH AH L OW"),
    ("how", "HH AW"),
    ("i", "AY"),
    ("is", "IH Z"),
    ("it", "IH T"),
    ("just", "JH AH S T"),
    ("know", "N OW"),
    ("like", "L AY K"),
    ("me", "M IY"),
    ("my", "M AY"),
    ("not", "N AA T"),
    ("of", "AH V"),
    ("okay", "OW K EY"),
    ("one", "W AH N"),
    ("really", "R IH L IY"),
    ("speech", "S P IY CH"),
    ("that", "DH AE T"),
    ("the", "DH AH"),
    ("there", "DH EH R"),
    ("think", "TH IH NG K"),
    ("this", "DH IH S"),
    ("to", "T UW"),
    ("today", "T AH D EY"),
    ("voice", "V OY S"),
    ("was", "W AA Z"),
    ("we", "W IY"),
    ("what", "W AH T"),
    ("with", "W IH DH"),
    ("world", "W ER L D"),
    ("you", "Y UW"),
];

fn letter(c: char) -> Option<&'static str> {
    Some(match c {
        'a' => "AE",
        'b' => "B",
        'c' => "K",
        'd' => "D",
        'e' => "EH",
        'f' => "F",
        'g' => "G",
        'h' => "HH",
        'i' => "IH",
        'j' => "JH",
        'k' => "K",
        'l' => "L",
        'm' => "M",
        'n' => "N",
        'o' => "AA",
        'p' => "P",
        'q' => "K",
        'r' => "R",
        's' => "S",
        't' => "T",
        'u' => "AH",
        'v' => "V",
        'w' => "W",
        'x' => "K",
        'y' => "IY",
        'z' => "Z",
        _ => return None,
    })
}

/// Dictionary lookup with a letter-to-sound fallback. Runs of vowel letters
/// collapse into one nucleus; a trailing silent `e` is dropped.
#[derive(Debug, Clone)]
pub struct DictionaryG2p {
    entries: HashMap<&'static str, Vec<Phoneme>>,
}

impl Default for DictionaryG2p {
    fn default() -> Self {
        let entries = DICTIONARY
            .iter()
            .map(|(word, pron)| {
                let phonemes = pron
                    .split_whitespace()
                    .map(|s| {
                        let id = symbol_id(s).expect("dictionary uses known symbols");
                        if is_vowel_symbol(s) {
                            Phoneme::nucleus(id)
                        } else {
                            Phoneme::plain(id)
                        }
                    })
                    .collect();
                (*word, phonemes)
            })
            .collect();
        Self { entries }
    }
}

impl DictionaryG2p {
    fn fallback(word: &str) -> Vec<Phoneme> {
        let chars: Vec<char> = word.chars().collect();
        let trimmed = if chars.len() > 2 && chars.last() == Some(&'e') { &chars[..chars.len() - 1] } else { &chars[..] };
        let mut out: Vec<Phoneme> = Vec::new();
        let mut prev_vowel = false;
        for &c in trimmed {
            let Some(sym) = letter(c) else { continue };
            let vowel = is_vowel_symbol(sym);
            if vowel && prev_vowel {
                continue;
            }
            let id = symbol_id(sym).expect("letter table uses known symbols");
            out.push(if vowel { Phoneme::nucleus(id) } else { Phoneme::plain(id) });
            prev_vowel = vowel;
        }
        out
    }
}

impl GraphemeToPhoneme for DictionaryG2p {
    fn phonemize(&self, token: &str) -> Vec<Phoneme> {
        let mut out = Vec::new();
        for piece in token.split_whitespace() {
            let lower = piece.to_lowercase();
            let word: String = lower.chars().filter(|c| c.is_alphanumeric() || *c == '\'').collect();
            let word = word.replace('\'', "");
            if !word.is_empty() {
                match self.entries.get(word.as_str()) {
                    Some(p) => out.extend_from_slice(p),
                    None => out.extend(Self::fallback(&word)),
                }
            }
            for c in lower.chars().filter(|c| PUNCTUATION.contains(*c)) {
                let id = PUNCTUATION_BASE + PUNCTUATION.find(c).expect("checked") as u32;
                out.push(Phoneme::punctuation(id));
            }
        }
        out
    }
}
