use nomen_core::asmnorm::{encode_function, InstrVocabulary, Normalizer};
use nomen_core::dataset::{Dataset, NamedFunction, Split};
use nomen_core::naming::TokenVocabulary;
use nomen_core::reserved::UNK;

use crate::model::Example;

/// The vocabularies a model is bound to, plus the immediate threshold used
/// to normalize its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    pub name: TokenVocabulary,
    pub instr: InstrVocabulary,
    pub imm_threshold: u64,
}

impl Vocabularies {
    pub fn of(dataset: &Dataset) -> Self {
        Vocabularies {
            name: dataset.name_vocab.clone(),
            instr: dataset.instr_vocab.clone(),
            imm_threshold: dataset.meta.imm_threshold,
        }
    }

    pub fn name_digest(&self) -> String {
        self.name.digest()
    }

    pub fn instr_digest(&self) -> String {
        self.instr.digest()
    }

    pub fn encode_source(&self, f: &nomen_core::corpus::RawFunction, max_src_len: usize) -> Vec<u32> {
        encode_function(f, &self.instr, &Normalizer::new(self.imm_threshold), max_src_len)
    }

    /// Encodes functions; names longer than `max_tgt_len` are truncated.
    pub fn encode(&self, fns: &[&NamedFunction], max_src_len: usize, max_tgt_len: usize) -> EncodedSet {
        let normalizer = Normalizer::new(self.imm_threshold);
        let examples = fns
            .iter()
            .map(|f| Example {
                src: encode_function(&f.function, &self.instr, &normalizer, max_src_len),
                tgt: f.name.tokens().iter().take(max_tgt_len).map(|t| self.name.id(t).unwrap_or(UNK)).collect(),
            })
            .collect();
        EncodedSet {
            ids: fns.iter().map(|f| f.function.function_id.clone()).collect(),
            examples,
            name_digest: self.name_digest(),
            instr_digest: self.instr_digest(),
        }
    }

    pub fn encode_split(&self, dataset: &Dataset, split: Split, max_src_len: usize, max_tgt_len: usize) -> EncodedSet {
        self.encode(&dataset.split(split), max_src_len, max_tgt_len)
    }

    /// Token strings for decoded ids.
    pub fn tokens(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().filter_map(|&id| self.name.token(id)).map(str::to_string).collect()
    }
}

/// Encoded examples stamped with the digests of the vocabularies used.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet {
    pub ids: Vec<String>,
    pub examples: Vec<Example>,
    pub name_digest: String,
    pub instr_digest: String,
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> EncodedSet {
        let n = n.min(self.len());
        EncodedSet {
            ids: self.ids[..n].to_vec(),
            examples: self.examples[..n].to_vec(),
            name_digest: self.name_digest.clone(),
            instr_digest: self.instr_digest.clone(),
        }
    }
}
