//! Function-name normalization: demangling, splitting, stemming,
//! vocabulary construction and final conversion onto the vocabulary.

mod demangle;
mod porter;
mod split;
mod vocab;

use std::fmt;

use thiserror::Error;

pub use demangle::{demangle, DemangleOutcome, DemangleResult, Demangler, DEFAULT_FOREIGN_PATTERNS};
pub use porter::stem_token;
pub use split::split_identifier;
pub use vocab::{build_vocabulary, read_stoplist, TokenVocabulary};

pub const DEFAULT_TAU: u64 = 500;
pub const DEFAULT_MAX_NAME_TOKENS: usize = 10;
pub const MIN_MATCH_LEN: usize = 3;

#[derive(Debug, Error)]
pub enum NamingError {
    #[error("tau must be at least 1")]
    InvalidTau,
    #[error("vocabulary file, line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A normalized function name: tokens drawn from a [`TokenVocabulary`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct NameTokens(Vec<String>);

impl NameTokens {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for NameTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Why a name produced no usable target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rejected {
    ForeignLanguage,
    Unparseable,
    /// Every token fell outside the vocabulary.
    Empty,
}

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ForeignLanguage => "foreign-language",
            Self::Unparseable => "unparseable",
            Self::Empty => "empty",
        })
    }
}

/// Demangle, split and stem: the vocabulary-independent half of the
/// pipeline.
pub fn raw_name_tokens(demangler: &Demangler, raw_name: &str) -> Result<Vec<String>, Rejected> {
    let base = match demangler.demangle(raw_name) {
        DemangleResult::Plain(s) | DemangleResult::Demangled(s) => s,
        DemangleResult::ForeignLanguage => return Err(Rejected::ForeignLanguage),
        DemangleResult::Unparseable => return Err(Rejected::Unparseable),
    };
    Ok(split_identifier(&base).iter().map(|t| stem_token(t)).collect())
}

/// Maps stemmed tokens onto the vocabulary. Known tokens are kept; unknown
/// ones are scanned left to right, emitting the longest vocabulary word
/// (at least three characters) starting at each position and dropping
/// characters that start no match.
pub fn final_convert(raw_tokens: &[String], vocab: &TokenVocabulary) -> NameTokens {
    let mut out = Vec::new();
    for token in raw_tokens {
        if vocab.contains(token) {
            out.push(token.clone());
            continue;
        }
        let bytes = token.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let longest = (MIN_MATCH_LEN..=vocab.max_word_len().min(bytes.len() - i))
                .rev()
                .find(|&len| token.get(i..i + len).is_some_and(|w| vocab.contains(w)));
            match longest {
                Some(len) => {
                    out.push(token[i..i + len].to_string());
                    i += len;
                }
                None => i += 1,
            }
        }
    }
    NameTokens(out)
}

/// The full pipeline from a symbol name to vocabulary tokens.
#[derive(Debug, Clone)]
pub struct NameNormalizer {
    pub demangler: Demangler,
    pub max_tokens: usize,
}

impl Default for NameNormalizer {
    fn default() -> Self {
        Self {
            demangler: Demangler::default(),
            max_tokens: DEFAULT_MAX_NAME_TOKENS,
        }
    }
}

impl NameNormalizer {
    pub fn normalize(&self, raw_name: &str, vocab: &TokenVocabulary) -> Result<NameTokens, Rejected> {
        let raw = raw_name_tokens(&self.demangler, raw_name)?;
        let mut tokens = final_convert(&raw, vocab);
        if tokens.is_empty() {
            return Err(Rejected::Empty);
        }
        tokens.0.truncate(self.max_tokens);
        Ok(tokens)
    }
}

/// [`NameNormalizer::normalize`] with default settings.
pub fn normalize_name(raw_name: &str, vocab: &TokenVocabulary) -> Result<NameTokens, Rejected> {
    NameNormalizer::default().normalize(raw_name, vocab)
}
