//! Package-level splits, corpus statistics and the on-disk dataset bundle.
//!
//! A bundle is a directory holding:
//!
//! * `corpus.jsonl` - listing records plus `id` and `name_tokens`
//! * `manifest.json` - package to split assignment, ratios and seed
//! * `name_vocab.tsv`, `instr_vocab.tsv` - the two vocabularies
//! * `meta.json` - format tag and version, function count, thresholds and
//!   the run configuration that produced the bundle
//!
//! All JSON is written with sorted keys so identical inputs give identical
//! bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asmnorm::InstrVocabulary;
use crate::corpus::{self, RawFunction};
use crate::naming::{NameTokens, TokenVocabulary};
use crate::rng::XorShiftRng;

pub const FORMAT_TAG: &str = "nomen-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("need at least 3 packages to split, found {0}")]
    TooFewPackages(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{file}: not a dataset bundle (format tag {found:?})")]
    BadMagic { file: String, found: String },
    #[error("{file}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { file: String, found: u32 },
    #[error("{file}: truncated, expected {expected} records but found {found}")]
    Truncated { file: String, expected: usize, found: usize },
    #[error("{file}, line {line}: {reason}")]
    Format { file: String, line: usize, reason: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(file: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        file: file.display().to_string(),
        source,
    }
}

/// A function together with its normalized name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedFunction {
    pub function: RawFunction,
    pub name: NameTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub assignment: BTreeMap<String, Split>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitManifest {
    pub fn split_of(&self, package: &str) -> Option<Split> {
        self.assignment.get(package).copied()
    }

    pub fn packages(&self, split: Split) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    /// Functions of `corpus` assigned to `split`, in corpus order.
    pub fn select<'a>(&self, corpus: &'a [NamedFunction], split: Split) -> Vec<&'a NamedFunction> {
        corpus
            .iter()
            .filter(|f| self.split_of(&f.function.package_id) == Some(split))
            .collect()
    }
}

/// Assigns whole packages to train/validation/test.
///
/// `packages` yields the package of every function. Packages are visited
/// in lexicographic order, shuffled with the seeded generator, then stably
/// ordered by descending function count (the shuffle only breaks ties).
/// Each package goes to the split whose function-count fraction is furthest
/// below its target ratio; ties go to the earlier split.
pub fn split_by_package<'a, I>(packages: I, ratios: [f64; 3], seed: u64) -> Result<SplitManifest, DatasetError>
where
    I: IntoIterator<Item = &'a str>,
{
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(DatasetError::InvalidRatios(ratios));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in packages {
        *counts.entry(p).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    if counts.len() < 3 {
        return Err(DatasetError::TooFewPackages(counts.len()));
    }
    let total: usize = counts.values().sum();
    let mut order: Vec<(&str, usize)> = counts.into_iter().collect();
    XorShiftRng::new(seed).shuffle(&mut order);
    order.sort_by_key(|&(_, n)| std::cmp::Reverse(n));

    let mut assigned = [0usize; 3];
    let mut assignment = BTreeMap::new();
    for (pkg, n) in order {
        let deficit = |i: usize| ratios[i] - assigned[i] as f64 / total as f64;
        let mut best = 0;
        for i in 1..3 {
            if deficit(i) > deficit(best) {
                best = i;
            }
        }
        assigned[best] += n;
        assignment.insert(pkg.to_string(), Split::ALL[best]);
    }
    Ok(SplitManifest { assignment, ratios, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub functions: usize,
    pub mean_name_tokens: f64,
    /// name length -> number of functions
    pub name_length_histogram: BTreeMap<usize, usize>,
    /// token -> number of occurrences over all names
    pub token_frequencies: BTreeMap<String, u64>,
    /// `(ln rank, ln frequency)`, rank 1 = most frequent
    pub loglog_points: Vec<(f64, f64)>,
}

impl CorpusStats {
    /// Tokens by descending frequency, ties lexicographic.
    pub fn ranked_tokens(&self) -> Vec<(&str, u64)> {
        let mut ranked: Vec<(&str, u64)> = self.token_frequencies.iter().map(|(t, &f)| (t.as_str(), f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked
    }

    /// Fraction of names with at most `len` tokens.
    pub fn fraction_at_most(&self, len: usize) -> f64 {
        let n: usize = self.name_length_histogram.range(..=len).map(|(_, c)| c).sum();
        n as f64 / self.functions as f64
    }

    /// `rank<TAB>token<TAB>frequency` lines for log-log plotting.
    pub fn write_rank_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (rank, (token, freq)) in self.ranked_tokens().into_iter().enumerate() {
            writeln!(out, "{}\t{token}\t{freq}", rank + 1)?;
        }
        Ok(())
    }
}

pub fn corpus_stats<'a, I>(names: I) -> Result<CorpusStats, DatasetError>
where
    I: IntoIterator<Item = &'a NameTokens>,
{
    let mut functions = 0usize;
    let mut total_tokens = 0usize;
    let mut name_length_histogram = BTreeMap::new();
    let mut token_frequencies: BTreeMap<String, u64> = BTreeMap::new();
    for name in names {
        functions += 1;
        total_tokens += name.len();
        *name_length_histogram.entry(name.len()).or_default() += 1;
        for t in name.tokens() {
            *token_frequencies.entry(t.clone()).or_default() += 1;
        }
    }
    if functions == 0 {
        return Err(DatasetError::EmptyCorpus);
    }
    let mut stats = CorpusStats {
        functions,
        mean_name_tokens: total_tokens as f64 / functions as f64,
        name_length_histogram,
        token_frequencies,
        loglog_points: Vec::new(),
    };
    stats.loglog_points = stats
        .ranked_tokens()
        .iter()
        .enumerate()
        .map(|(i, &(_, f))| (((i + 1) as f64).ln(), (f as f64).ln()))
        .collect();
    Ok(stats)
}

/// Provenance stored in `meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetMeta {
    pub seed: u64,
    pub imm_threshold: u64,
    pub min_len: usize,
    pub max_len: usize,
    /// Flattened run configuration that produced the bundle.
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub corpus: Vec<NamedFunction>,
    pub manifest: SplitManifest,
    pub name_vocab: TokenVocabulary,
    pub instr_vocab: InstrVocabulary,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&NamedFunction> {
        self.manifest.select(&self.corpus, split)
    }
}

const CORPUS_FILE: &str = "corpus.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const NAME_VOCAB_FILE: &str = "name_vocab.tsv";
const INSTR_VOCAB_FILE: &str = "instr_vocab.tsv";
const META_FILE: &str = "meta.json";

/// One corpus record with identity and target tokens, sorted keys.
pub fn named_function_value(f: &NamedFunction) -> serde_json::Value {
    let mut value = corpus::to_listing_value(&f.function);
    let obj = value.as_object_mut().expect("listing value is an object");
    obj.insert("id".into(), f.function.function_id.clone().into());
    obj.insert("name_tokens".into(), f.name.tokens().to_vec().into());
    value
}

#[derive(Deserialize)]
struct BundleRecord {
    id: String,
    package: String,
    binary: String,
    address: Option<u64>,
    name: String,
    instructions: Vec<corpus::InstructionRecord>,
    name_tokens: Vec<String>,
}

/// Parses one `corpus.jsonl` line.
pub fn parse_named_function(line: &str) -> Result<NamedFunction, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    corpus::check_keys(&value, &corpus::RECORD_KEYS, &["id", "name_tokens"])?;
    let rec: BundleRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
    Ok(NamedFunction {
        function: RawFunction {
            package_id: rec.package,
            binary_id: rec.binary,
            function_id: rec.id,
            address: rec.address,
            mangled_name: rec.name,
            instructions: corpus::build_instructions(rec.instructions)?,
        },
        name: NameTokens::new(rec.name_tokens),
    })
}

/// Writes functions as `corpus.jsonl` lines.
pub fn write_named_functions<W: Write>(mut out: W, corpus: &[NamedFunction]) -> std::io::Result<()> {
    for f in corpus {
        serde_json::to_writer(&mut out, &named_function_value(f))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads `corpus.jsonl` lines, failing on the first bad record.
pub fn read_named_functions<R: BufRead>(reader: R, file: &str) -> Result<Vec<NamedFunction>, DatasetError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            file: file.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Format {
            file: file.to_string(),
            line: i + 1,
            reason,
        };
        let f = parse_named_function(&line).map_err(bad)?;
        if !seen.insert(f.function.function_id.clone()) {
            return Err(bad(format!("duplicate function id `{}`", f.function.function_id)));
        }
        out.push(f);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let corpus_path = dir.join(CORPUS_FILE);
    {
        let file = fs::File::create(&corpus_path).map_err(io_err(&corpus_path))?;
        let mut w = BufWriter::new(file);
        write_named_functions(&mut w, &dataset.corpus).map_err(io_err(&corpus_path))?;
        w.flush().map_err(io_err(&corpus_path))?;
    }
    let manifest = serde_json::to_value(&dataset.manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), format!("{manifest:#}\n").as_bytes())?;
    write_file(&dir.join(NAME_VOCAB_FILE), dataset.name_vocab.to_tsv_string().as_bytes())?;
    write_file(&dir.join(INSTR_VOCAB_FILE), dataset.instr_vocab.to_tsv_string().as_bytes())?;
    let meta = serde_json::json!({
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "functions": dataset.corpus.len(),
        "seed": dataset.meta.seed,
        "imm_threshold": dataset.meta.imm_threshold,
        "min_len": dataset.meta.min_len,
        "max_len": dataset.meta.max_len,
        "tau": dataset.name_vocab.tau(),
        "min_freq": dataset.instr_vocab.min_frequency(),
        "name_vocab_digest": dataset.name_vocab.digest(),
        "instr_vocab_digest": dataset.instr_vocab.digest(),
        "config": dataset.meta.config,
    });
    write_file(&dir.join(META_FILE), format!("{meta:#}\n").as_bytes())
}

fn read_json(path: &Path) -> Result<serde_json::Value, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Format {
        file: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let meta_path = dir.join(META_FILE);
    let meta = read_json(&meta_path)?;
    let file = meta_path.display().to_string();
    let format = meta.get("format").and_then(|v| v.as_str()).unwrap_or_default();
    if format != FORMAT_TAG {
        return Err(DatasetError::BadMagic {
            file,
            found: format.to_string(),
        });
    }
    let version = meta.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(DatasetError::Version { file, found: version });
    }
    let field = |key: &str| -> Result<u64, DatasetError> {
        meta.get(key).and_then(|v| v.as_u64()).ok_or_else(|| DatasetError::Format {
            file: file.clone(),
            line: 0,
            reason: format!("missing field `{key}`"),
        })
    };
    let expected = field("functions")? as usize;
    let config: BTreeMap<String, String> = meta
        .get("config")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| DatasetError::Format {
            file: file.clone(),
            line: 0,
            reason: e.to_string(),
        })?
        .unwrap_or_default();
    let meta_out = DatasetMeta {
        seed: field("seed")?,
        imm_threshold: field("imm_threshold")?,
        min_len: field("min_len")? as usize,
        max_len: field("max_len")? as usize,
        config,
    };

    let corpus_path = dir.join(CORPUS_FILE);
    let reader = BufReader::new(fs::File::open(&corpus_path).map_err(io_err(&corpus_path))?);
    let corpus = read_named_functions(reader, &corpus_path.display().to_string())?;
    if corpus.len() != expected {
        return Err(DatasetError::Truncated {
            file: corpus_path.display().to_string(),
            expected,
            found: corpus.len(),
        });
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: SplitManifest =
        serde_json::from_value(read_json(&manifest_path)?).map_err(|e| DatasetError::Format {
            file: manifest_path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;

    let name_path = dir.join(NAME_VOCAB_FILE);
    let text = fs::read_to_string(&name_path).map_err(io_err(&name_path))?;
    let name_vocab = TokenVocabulary::read_tsv(text.as_bytes()).map_err(|e| DatasetError::Format {
        file: name_path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    let instr_path = dir.join(INSTR_VOCAB_FILE);
    let text = fs::read_to_string(&instr_path).map_err(io_err(&instr_path))?;
    let instr_vocab = InstrVocabulary::read_tsv(text.as_bytes()).map_err(|e| DatasetError::Format {
        file: instr_path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    Ok(Dataset {
        corpus,
        manifest,
        name_vocab,
        instr_vocab,
        meta: meta_out,
    })
}

/// Function counts per split under a manifest.
pub fn split_counts(manifest: &SplitManifest, packages: &[&str]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let lookup: HashMap<&str, Split> = manifest.assignment.iter().map(|(p, &s)| (p.as_str(), s)).collect();
    for p in packages {
        if let Some(s) = lookup.get(p) {
            counts[s.index()] += 1;
        }
    }
    counts
}
