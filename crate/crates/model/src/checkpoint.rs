//! Binary checkpoint container.
//!
//! Layout (integers little-endian, `block` = u64 length + bytes):
//!
//! ```text
//! "NOMEN1" u32:version
//! block:config            sorted key=value lines
//! block:name_digest       block:instr_digest      (hex sha256)
//! block:meta              sorted key=value lines
//! block:name_vocab_tsv    block:instr_vocab_tsv
//! u32:tensor_count
//! per tensor: block:name u32:ndims u64:dim...
//! per tensor: row-major f32 payload
//! 32 bytes: sha256 of everything above
//! ```

use std::collections::BTreeMap;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array2;
use nomen_core::asmnorm::InstrVocabulary;
use nomen_core::naming::TokenVocabulary;
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::data::Vocabularies;
use crate::model::Model;
use crate::params::Params;
use crate::ModelError;

pub const MAGIC: &[u8; 6] = b"NOMEN1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
    /// Flattened training configuration(s) that produced the parameters.
    pub train_config: BTreeMap<String, String>,
}

impl TrainingMeta {
    fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = self.train_config.clone();
        kv.insert("seed".into(), self.seed.to_string());
        kv.insert("epochs_run".into(), self.epochs_run.to_string());
        kv.insert("best_epoch".into(), self.best_epoch.to_string());
        kv.insert("best_val_f1".into(), self.best_val_f1.map_or("none".into(), |f| format!("{f:?}")));
        kv
    }

    fn from_kv(mut kv: BTreeMap<String, String>) -> Result<Self, ModelError> {
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| ModelError::Checkpoint(format!("meta lacks `{k}`")));
        let bad = |k: &str| ModelError::Checkpoint(format!("bad meta value for `{k}`"));
        let seed = take("seed")?.parse().map_err(|_| bad("seed"))?;
        let epochs_run = take("epochs_run")?.parse().map_err(|_| bad("epochs_run"))?;
        let best_epoch = take("best_epoch")?.parse().map_err(|_| bad("best_epoch"))?;
        let best_val_f1 = match take("best_val_f1")?.as_str() {
            "none" => None,
            v => Some(v.parse().map_err(|_| bad("best_val_f1"))?),
        };
        Ok(TrainingMeta { seed, epochs_run, best_epoch, best_val_f1, train_config: kv })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params,
    pub vocabs: Vocabularies,
    pub meta: TrainingMeta,
}

fn kv_text(kv: &BTreeMap<String, String>) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    text.lines()
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| ModelError::Checkpoint(format!("bad key=value line `{l}`")))
        })
        .collect()
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self) -> Result<&'a [u8], ModelError> {
        let n = usize::try_from(self.u64()?).map_err(|_| ModelError::Checkpoint("block too large".into()))?;
        self.take(n)
    }

    fn text(&mut self) -> Result<&'a str, ModelError> {
        std::str::from_utf8(self.block()?).map_err(|_| ModelError::Checkpoint("block is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model, ModelError> {
        Model::from_params(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_block(&mut out, kv_text(&self.config.to_kv()).as_bytes());
        put_block(&mut out, self.vocabs.name_digest().as_bytes());
        put_block(&mut out, self.vocabs.instr_digest().as_bytes());
        let mut meta = self.meta.to_kv();
        meta.insert("imm_threshold".into(), self.vocabs.imm_threshold.to_string());
        put_block(&mut out, kv_text(&meta).as_bytes());
        put_block(&mut out, self.vocabs.name.to_tsv_string().as_bytes());
        put_block(&mut out, self.vocabs.instr.to_tsv_string().as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, v) in self.params.names.iter().zip(&self.params.values) {
            put_block(&mut out, name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(v.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(v.ncols() as u64).to_le_bytes());
        }
        for v in &self.params.values {
            for &x in v.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ModelError::Checkpoint("checksum mismatch".into()));
        }
        let mut c = Cursor { bytes: body, pos: MAGIC.len() };
        let version = c.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let config = ModelConfig::from_kv(&parse_kv(c.text()?)?)?;
        let name_digest = c.text()?.to_string();
        let instr_digest = c.text()?.to_string();
        let mut meta = parse_kv(c.text()?)?;
        let imm_threshold = meta
            .remove("imm_threshold")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::Checkpoint("meta lacks imm_threshold".into()))?;
        let meta = TrainingMeta::from_kv(meta)?;
        let name = TokenVocabulary::read_tsv(BufReader::new(c.block()?))
            .map_err(|e| ModelError::Checkpoint(format!("name vocabulary: {e}")))?;
        let instr = InstrVocabulary::read_tsv(BufReader::new(c.block()?))
            .map_err(|e| ModelError::Checkpoint(format!("instruction vocabulary: {e}")))?;
        let vocabs = Vocabularies { name, instr, imm_threshold };
        if vocabs.name_digest() != name_digest || vocabs.instr_digest() != instr_digest {
            return Err(ModelError::Checkpoint("embedded vocabulary does not match its digest".into()));
        }
        let count = c.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name = c.text()?.to_string();
            let ndims = c.u32()?;
            if ndims != 2 {
                return Err(ModelError::Checkpoint(format!("{name}: expected 2 dims, found {ndims}")));
            }
            let rows = c.u64()? as usize;
            let cols = c.u64()? as usize;
            manifest.push((name, rows, cols));
        }
        let mut names = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        for (name, rows, cols) in manifest {
            let n = rows.checked_mul(cols).ok_or_else(|| ModelError::Checkpoint("tensor too large".into()))?;
            let raw = c.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("tensor too large".into()))?)?;
            let data: Vec<f64> =
                raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
            values.push(Array2::from_shape_vec((rows, cols), data).expect("length matches shape"));
            names.push(name);
        }
        if c.pos != body.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        let params = Params { names, values };
        // validates names and shapes against the config
        Model::from_params(config.clone(), params.clone())?;
        Ok(Checkpoint { config, params, vocabs, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Hex sha256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        nomen_core::sha256_hex(&self.to_bytes())
    }
}
