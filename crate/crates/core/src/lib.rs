//! Data-side pipeline for naming functions in stripped binaries.
//!
//! The crate covers everything that happens before and after the neural
//! model: ingesting disassembly listings, normalizing instructions and
//! function names, building vocabularies, package-level splitting, corpus
//! statistics and token-set evaluation.

pub mod asmnorm;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod naming;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use asmnorm::{InstrVocabulary, NormalizedInstruction, Normalizer};
pub use corpus::{Instruction, RawFunction};
pub use dataset::{CorpusStats, Dataset, NamedFunction, Split, SplitManifest};
pub use eval::{MetricsReport, Prediction};
pub use naming::{NameTokens, TokenVocabulary};

/// Reserved ids shared by the name vocabulary and the decoder.
pub mod reserved {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const NAMES: [&str; 4] = ["PAD", "BOS", "EOS", "UNK"];
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
