//! End-to-end construction of a [`Dataset`] from raw listing functions.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::asmnorm::{build_instruction_vocabulary, AsmError, InstrVocabulary, Normalizer, DEFAULT_IMM_THRESHOLD};
use crate::corpus::{deduplicate_with, filter_by_length, RawFunction};
use crate::dataset::{split_by_package, Dataset, DatasetError, DatasetMeta, NamedFunction, Split, DEFAULT_RATIOS};
use crate::naming::{
    build_vocabulary, final_convert, raw_name_tokens, Demangler, NamingError, Rejected, TokenVocabulary,
    DEFAULT_MAX_NAME_TOKENS, DEFAULT_TAU,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Naming(#[from] NamingError),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid option: {0}")]
    Options(String),
    /// Every function lost its name (filtered, rejected or out of vocabulary).
    #[error("no function kept a name ({0:?})")]
    NothingKept(PipelineReport),
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub imm_threshold: u64,
    pub min_len: usize,
    pub max_len: usize,
    pub tau: u64,
    pub stoplist: BTreeSet<String>,
    pub foreign_patterns: Vec<String>,
    pub max_name_tokens: usize,
    pub min_instr_freq: u64,
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Recorded verbatim in the dataset meta.
    pub config: BTreeMap<String, String>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            imm_threshold: DEFAULT_IMM_THRESHOLD,
            min_len: 5,
            max_len: 500,
            tau: DEFAULT_TAU,
            stoplist: BTreeSet::new(),
            foreign_patterns: crate::naming::DEFAULT_FOREIGN_PATTERNS.iter().map(|s| s.to_string()).collect(),
            max_name_tokens: DEFAULT_MAX_NAME_TOKENS,
            min_instr_freq: 2,
            ratios: DEFAULT_RATIOS,
            seed: 0,
            config: BTreeMap::new(),
        }
    }
}

/// Function counts after each stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineReport {
    pub input: usize,
    pub after_length_filter: usize,
    pub after_dedup: usize,
    pub foreign_language: usize,
    pub unparseable: usize,
    pub empty_name: usize,
    pub kept: usize,
}

/// Filters, deduplicates and names functions, then splits by package and
/// builds the instruction vocabulary on the training split.
///
/// The name vocabulary is built over the whole corpus unless one is given;
/// the instruction vocabulary is built over training functions unless one
/// is given (both are given when encoding a new corpus for an existing
/// model).
pub fn build_dataset(
    fns: Vec<RawFunction>,
    opts: &PipelineOptions,
    name_vocab: Option<TokenVocabulary>,
    instr_vocab: Option<InstrVocabulary>,
) -> Result<(Dataset, PipelineReport), PipelineError> {
    if opts.min_len == 0 || opts.max_len < opts.min_len {
        return Err(PipelineError::Options(format!("invalid length bounds {}..={}", opts.min_len, opts.max_len)));
    }
    let normalizer = Normalizer::try_new(opts.imm_threshold, Default::default())?;
    let demangler = Demangler::new(&opts.foreign_patterns)
        .map_err(|e| PipelineError::Options(format!("foreign-language pattern: {e}")))?;
    let mut report = PipelineReport { input: fns.len(), ..Default::default() };
    let fns = filter_by_length(fns, opts.min_len, opts.max_len);
    report.after_length_filter = fns.len();
    let fns = deduplicate_with(fns, &normalizer);
    report.after_dedup = fns.len();

    let mut named_raw = Vec::with_capacity(fns.len());
    for f in fns {
        match raw_name_tokens(&demangler, &f.mangled_name) {
            Ok(tokens) => named_raw.push((f, tokens)),
            Err(Rejected::ForeignLanguage) => report.foreign_language += 1,
            Err(Rejected::Unparseable) => report.unparseable += 1,
            Err(Rejected::Empty) => report.empty_name += 1,
        }
    }
    let name_vocab = match name_vocab {
        Some(v) => v,
        None => build_vocabulary(
            named_raw.iter().map(|(f, t)| (f.package_id.as_str(), t.iter())),
            opts.tau,
            &opts.stoplist,
        )?,
    };
    let mut corpus = Vec::with_capacity(named_raw.len());
    for (function, raw) in named_raw {
        let mut tokens = final_convert(&raw, &name_vocab).into_inner();
        if tokens.is_empty() {
            report.empty_name += 1;
            continue;
        }
        tokens.truncate(opts.max_name_tokens);
        corpus.push(NamedFunction { function, name: crate::naming::NameTokens::new(tokens) });
    }
    report.kept = corpus.len();
    if corpus.is_empty() {
        return Err(PipelineError::NothingKept(report));
    }

    let manifest = split_by_package(corpus.iter().map(|f| f.function.package_id.as_str()), opts.ratios, opts.seed)?;
    let instr_vocab = match instr_vocab {
        Some(v) => v,
        None => {
            let train: Vec<Vec<_>> = manifest
                .select(&corpus, Split::Train)
                .iter()
                .map(|f| normalizer.normalize_function(&f.function))
                .collect();
            build_instruction_vocabulary(train.iter().map(|f| f.iter()), opts.min_instr_freq)?
        }
    };
    let meta = DatasetMeta {
        seed: opts.seed,
        imm_threshold: opts.imm_threshold,
        min_len: opts.min_len,
        max_len: opts.max_len,
        config: opts.config.clone(),
    };
    Ok((Dataset { corpus, manifest, name_vocab, instr_vocab, meta }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn synthetic_general_corpus() {
        let fns = generate(&SynthConfig::general(3));
        let opts = PipelineOptions { tau: 3, ..Default::default() };
        let (ds, report) = build_dataset(fns, &opts, None, None).unwrap();
        assert_eq!(report.input, 40 * 19);
        // one too-short function per package
        assert_eq!(report.after_length_filter, 40 * 18);
        assert!(report.after_dedup <= 40 * 17);
        assert_eq!(report.foreign_language, 40);
        assert_eq!(report.unparseable, 40);
        // package-private tags never reach the vocabulary
        assert!(ds.name_vocab.words().iter().all(|(w, _)| !w.starts_with("xq")));
        assert_eq!(ds.corpus.len(), report.kept);
        for f in &ds.corpus {
            assert!(!f.name.is_empty());
        }
    }

    #[test]
    fn toy_corpus_keeps_all_functions() {
        let opts = PipelineOptions { tau: 2, ..Default::default() };
        let (ds, report) = build_dataset(generate(&SynthConfig::toy()), &opts, None, None).unwrap();
        assert_eq!(report.kept, 100, "{report:?}");
        assert_eq!(ds.corpus.len(), 100);
    }
}
