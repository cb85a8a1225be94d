//! Tokenization, hashed bag-of-ngrams features, the language gate and
//! gazetteer entity extraction.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Default feature-space dimension (2^18).
pub const DEFAULT_DIM: usize = 1 << 18;

/// Minimum function-word fraction for an utterance to count as English.
pub const DEFAULT_LANGUAGE_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Codepoint offsets into the tokenized text, `end` exclusive.
    pub start: usize,
    pub end: usize,
    pub normalized: String,
}

/// NFC normalization applied to all user text before tokenization.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Split into maximal runs of letters, digits and apostrophes. Leading and
/// trailing apostrophes are not part of a token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_word_char(chars[i]) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && is_word_char(chars[j]) {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        while s < e && is_apostrophe(chars[s]) {
            s += 1;
        }
        while e > s && is_apostrophe(chars[e - 1]) {
            e -= 1;
        }
        if s < e {
            let surface: String = chars[s..e].iter().collect();
            tokens.push(Token {
                normalized: surface.to_lowercase(),
                surface,
                start: s,
                end: e,
            });
        }
        i = j;
    }
    tokens
}

/// Sparse vector of hashed feature counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: usize,
    /// Strictly increasing, all `< dim`.
    pub indices: Vec<u32>,
    /// Parallel to `indices`, all positive.
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn empty(dim: usize) -> Self {
        FeatureVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .map(|&i| i as usize)
            .zip(self.values.iter().copied())
    }

    /// Every count multiplied by `factor` (which must be positive).
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0);
        FeatureVector {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    fn from_counts(dim: usize, counts: HashMap<u32, f64>) -> Self {
        let mut pairs: Vec<(u32, f64)> = counts.into_iter().collect();
        pairs.sort_unstable_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        FeatureVector { dim, indices, values }
    }
}

/// 64-bit FNV-1a. Feature indices are `fnv1a64(key) % dim` where `key` is
/// `"w:" + token` for unigrams and `"b:" + left + " " + right` for bigrams.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn bucket(key: &str, dim: usize) -> u32 {
    (fnv1a64(key.as_bytes()) % dim as u64) as u32
}

/// Bag of unigrams and adjacent bigrams over normalized tokens, hashed into
/// `[0, dim)`.
pub fn featurize(tokens: &[Token], dim: usize) -> FeatureVector {
    assert!(dim >= 1 && dim <= u32::MAX as usize, "feature dimension out of range");
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for t in tokens {
        *counts.entry(bucket(&format!("w:{}", t.normalized), dim)).or_default() += 1.0;
    }
    for pair in tokens.windows(2) {
        let key = format!("b:{} {}", pair[0].normalized, pair[1].normalized);
        *counts.entry(bucket(&key, dim)).or_default() += 1.0;
    }
    FeatureVector::from_counts(dim, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    English,
    Unknown,
}

const ENGLISH_FUNCTION_WORDS: &[&str] = &[
    "a", "about", "after", "all", "am", "an", "and", "any", "are", "as", "at", "be", "because", "been", "before",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "here", "him",
    "his", "how", "i", "i'm", "if", "in", "into", "is", "it", "it's", "its", "me", "my", "near", "no", "not", "now",
    "of", "on", "or", "our", "she", "should", "so", "some", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "those", "to", "today", "up", "us", "was", "we", "were", "what", "when", "where", "which",
    "who", "why", "will", "with", "would", "you", "your",
];

/// Function-word heuristic. Inputs with fewer than three tokens always pass.
pub fn detect_language(text: &str, threshold: f64) -> (Language, f64) {
    let tokens = tokenize(&normalize_text(text));
    if tokens.is_empty() {
        return (Language::English, 0.0);
    }
    let hits = tokens
        .iter()
        .filter(|t| ENGLISH_FUNCTION_WORDS.binary_search(&t.normalized.as_str()).is_ok())
        .count();
    let score = hits as f64 / tokens.len() as f64;
    let lang = if score >= threshold || tokens.len() < 3 {
        Language::English
    } else {
        Language::Unknown
    };
    (lang, score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchSource {
    Gazetteer,
    Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMatch {
    pub entity_type: String,
    pub value: String,
    pub start: usize,
    pub end: usize,
    pub source: MatchSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub entity_type: String,
    pub canonical: String,
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected 'surface<TAB>entity_type<TAB>canonical'")]
    Malformed { line: usize },
}

/// Known surface forms keyed by their normalized token sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: HashMap<String, LexiconEntry>,
    max_tokens: usize,
}

fn lexicon_key(surface: &str) -> String {
    tokenize(&normalize_text(surface))
        .into_iter()
        .map(|t| t.normalized)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when the surface form has no tokens.
    pub fn insert(&mut self, surface: &str, entity_type: &str, canonical: &str) -> bool {
        let key = lexicon_key(surface);
        if key.is_empty() || canonical.trim().is_empty() {
            return false;
        }
        self.max_tokens = self.max_tokens.max(key.split(' ').count());
        self.entries.insert(
            key,
            LexiconEntry {
                entity_type: entity_type.to_string(),
                canonical: canonical.trim().to_string(),
            },
        );
        true
    }

    pub fn lookup(&self, surface: &str) -> Option<&LexiconEntry> {
        self.entries.get(&lexicon_key(surface))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse `surface<TAB>entity_type<TAB>canonical` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(source: &str) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::new();
        for (i, raw) in source.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields[1].trim().is_empty() {
                return Err(LexiconError::Malformed { line: i + 1 });
            }
            if !lex.insert(fields[0], fields[1].trim(), fields[2]) {
                return Err(LexiconError::Malformed { line: i + 1 });
            }
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&source)
    }
}

/// Greedy longest match, left to right, across all lexicons. When two
/// lexicons match the same span length the earlier lexicon wins.
pub fn extract_entities(tokens: &[Token], lexicons: &[Lexicon]) -> Vec<EntityMatch> {
    let longest = lexicons.iter().map(|l| l.max_tokens).max().unwrap_or(0);
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < tokens.len() {
        let max_len = longest.min(tokens.len() - i);
        for len in (1..=max_len).rev() {
            let key = tokens[i..i + len]
                .iter()
                .map(|t| t.normalized.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            if let Some(entry) = lexicons.iter().find_map(|l| l.entries.get(&key)) {
                out.push(EntityMatch {
                    entity_type: entry.entity_type.clone(),
                    value: entry.canonical.clone(),
                    start: tokens[i].start,
                    end: tokens[i + len - 1].end,
                    source: MatchSource::Gazetteer,
                });
                i += len;
                continue 'outer;
            }
        }
        i += 1;
    }
    out
}
