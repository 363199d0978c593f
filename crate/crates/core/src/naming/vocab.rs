//! Output vocabulary of name tokens, selected by project frequency.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use super::NamingError;
use crate::reserved;

/// Closed output vocabulary. Ids 0-3 are `PAD`, `BOS`, `EOS`, `UNK`; words
/// follow by descending project frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocabulary {
    tau: u64,
    stoplist: BTreeSet<String>,
    words: Vec<(String, u64)>,
    index: HashMap<String, u32>,
    max_word_len: usize,
}

const RESERVED: usize = reserved::NAMES.len();

impl TokenVocabulary {
    fn from_sorted(tau: u64, stoplist: BTreeSet<String>, words: Vec<(String, u64)>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), (i + RESERVED) as u32))
            .collect();
        let max_word_len = words.iter().map(|(w, _)| w.len()).max().unwrap_or(0);
        Self {
            tau,
            stoplist,
            words,
            index,
            max_word_len,
        }
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn stoplist(&self) -> &BTreeSet<String> {
        &self.stoplist
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.words.len() + RESERVED
    }

    /// True when no word survived selection.
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        let id = id as usize;
        if id < RESERVED {
            return Some(reserved::NAMES[id]);
        }
        self.words.get(id - RESERVED).map(|(w, _)| w.as_str())
    }

    pub fn project_frequency(&self, token: &str) -> Option<u64> {
        self.id(token).map(|id| self.words[id as usize - RESERVED].1)
    }

    /// Non-reserved `(word, project_frequency)` pairs in id order.
    pub fn words(&self) -> &[(String, u64)] {
        &self.words
    }

    pub(crate) fn max_word_len(&self) -> usize {
        self.max_word_len
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#tau={} #reserved={}", self.tau, reserved::NAMES.join(","))?;
        for stop in &self.stoplist {
            writeln!(out, "#stop={stop}")?;
        }
        for (w, f) in &self.words {
            writeln!(out, "{w}\t{f}")?;
        }
        Ok(())
    }

    pub fn to_tsv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, NamingError> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let bad = |line: usize, reason: String| NamingError::VocabFormat { line, reason };
        let mut tau = None;
        let mut reserved_ok = false;
        for field in header.split_whitespace() {
            if let Some(v) = field.strip_prefix("#tau=") {
                tau = v.parse().ok();
            } else if let Some(v) = field.strip_prefix("#reserved=") {
                reserved_ok = v == reserved::NAMES.join(",");
            }
        }
        let tau = tau.ok_or_else(|| bad(1, format!("bad header {header:?}")))?;
        if !reserved_ok {
            return Err(bad(1, "reserved symbols must be PAD,BOS,EOS,UNK".into()));
        }
        let mut stoplist = BTreeSet::new();
        let mut words = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if let Some(stop) = line.strip_prefix("#stop=") {
                stoplist.insert(stop.to_string());
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (w, f) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 2, "expected token<TAB>project_frequency".into()))?;
            let f = f.parse().map_err(|_| bad(i + 2, format!("bad frequency {f:?}")))?;
            words.push((w.to_string(), f));
        }
        Ok(Self::from_sorted(tau, stoplist, words))
    }

    pub fn digest(&self) -> String {
        crate::sha256_hex(self.to_tsv_string().as_bytes())
    }
}

/// Reads a stoplist: one token per line, `#` starts a comment.
pub fn read_stoplist<R: BufRead>(reader: R) -> std::io::Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        let token = line.split('#').next().unwrap_or_default().trim();
        if !token.is_empty() {
            out.insert(token.to_lowercase());
        }
    }
    Ok(out)
}

/// Selects tokens used by at least `tau` distinct packages, minus the
/// stoplist. Input tokens must already be split and stemmed.
pub fn build_vocabulary<'a, I, T>(
    name_token_lists: I,
    tau: u64,
    stoplist: &BTreeSet<String>,
) -> Result<TokenVocabulary, NamingError>
where
    I: IntoIterator<Item = (&'a str, T)>,
    T: IntoIterator<Item = &'a String>,
{
    if tau < 1 {
        return Err(NamingError::InvalidTau);
    }
    let mut packages_per_token: HashMap<&str, HashSet<&str>> = HashMap::new();
    for (package, tokens) in name_token_lists {
        for t in tokens {
            packages_per_token.entry(t.as_str()).or_default().insert(package);
        }
    }
    let mut words: Vec<(String, u64)> = packages_per_token
        .into_iter()
        .map(|(t, pkgs)| (t, pkgs.len() as u64))
        .filter(|&(t, f)| f >= tau && !stoplist.contains(t) && !reserved::NAMES.contains(&t) && !t.is_empty())
        .map(|(t, f)| (t.to_string(), f))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(TokenVocabulary::from_sorted(tau, stoplist.clone(), words))
}
