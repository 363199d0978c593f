//! Ingestion of disassembly listings into canonical function records.
//!
//! Listings are JSON lines, one function per line:
//!
//! ```text
//! {"package": "...", "binary": "...", "address": 4198400, "name": "...",
//!  "instructions": [{"mn": "mov", "ops": ["rbp", "rsp"]}, ...]}
//! ```
//!
//! `address` may be `null`. Instruction objects may carry an optional
//! `"addr"` byte offset. In strict mode any other key is an error.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asmnorm::Normalizer;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate function id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub mnemonic: String,
    pub operands: Vec<String>,
    pub address: Option<u64>,
}

impl Instruction {
    /// Builds an instruction, lowercasing the mnemonic.
    pub fn new<S: Into<String>>(mnemonic: &str, operands: impl IntoIterator<Item = S>) -> Self {
        Self {
            mnemonic: mnemonic.to_lowercase(),
            operands: operands.into_iter().map(Into::into).collect(),
            address: None,
        }
    }

    pub fn with_address(mut self, address: u64) -> Self {
        self.address = Some(address);
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.mnemonic.is_empty() {
            return Err("empty mnemonic".into());
        }
        if self.mnemonic.chars().any(char::is_whitespace) {
            return Err(format!("mnemonic `{}` contains whitespace", self.mnemonic));
        }
        if let Some(op) = self.operands.iter().find(|op| op.contains(['\n', '\r'])) {
            return Err(format!("operand {op:?} contains a newline"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFunction {
    pub package_id: String,
    pub binary_id: String,
    pub function_id: String,
    pub address: Option<u64>,
    pub mangled_name: String,
    pub instructions: Vec<Instruction>,
}

impl RawFunction {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// `{package}/{binary}/{0xaddress}` or `{package}/{binary}/{ordinal}`.
    pub fn make_id(package: &str, binary: &str, address: Option<u64>, ordinal: usize) -> String {
        match address {
            Some(addr) => format!("{package}/{binary}/0x{addr:x}"),
            None => format!("{package}/{binary}/{ordinal}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject unknown keys and abort on the first malformed record.
    pub strict: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

/// Result of a lenient parse: accepted functions plus skipped records.
#[derive(Debug, Default)]
pub struct Listing {
    pub functions: Vec<RawFunction>,
    pub skipped: Vec<(usize, String)>,
}

pub(crate) const RECORD_KEYS: [&str; 5] = ["package", "binary", "address", "name", "instructions"];
const INSTRUCTION_KEYS: [&str; 3] = ["mn", "ops", "addr"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct InstructionRecord {
    pub mn: String,
    pub ops: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
struct ListingRecord {
    package: String,
    binary: String,
    address: Option<u64>,
    name: String,
    instructions: Vec<InstructionRecord>,
}

pub(crate) fn check_keys(
    value: &serde_json::Value,
    allowed: &[&str],
    extra: &[&str],
) -> Result<(), String> {
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) && !extra.contains(&key.as_str()) {
            return Err(format!("unknown field `{key}`"));
        }
    }
    if let Some(list) = obj.get("instructions").and_then(|v| v.as_array()) {
        for ins in list {
            let ins = ins.as_object().ok_or("instruction is not a JSON object")?;
            if let Some(key) = ins.keys().find(|k| !INSTRUCTION_KEYS.contains(&k.as_str())) {
                return Err(format!("unknown instruction field `{key}`"));
            }
        }
    }
    Ok(())
}

pub(crate) fn build_instructions(records: Vec<InstructionRecord>) -> Result<Vec<Instruction>, String> {
    let mut out = Vec::with_capacity(records.len());
    let mut last_addr: Option<u64> = None;
    for rec in records {
        let ins = Instruction {
            mnemonic: rec.mn.to_lowercase(),
            operands: rec.ops,
            address: rec.addr,
        };
        ins.validate()?;
        if let (Some(prev), Some(cur)) = (last_addr, ins.address) {
            if cur < prev {
                return Err(format!("instruction address 0x{cur:x} precedes 0x{prev:x}"));
            }
        }
        if ins.address.is_some() {
            last_addr = ins.address;
        }
        out.push(ins);
    }
    Ok(out)
}

fn parse_record(line: &str, ordinal: usize, strict: bool) -> Result<RawFunction, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if strict {
        check_keys(&value, &RECORD_KEYS, &[])?;
    }
    let rec: ListingRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let instructions = build_instructions(rec.instructions)?;
    Ok(RawFunction {
        function_id: RawFunction::make_id(&rec.package, &rec.binary, rec.address, ordinal),
        package_id: rec.package,
        binary_id: rec.binary,
        address: rec.address,
        mangled_name: rec.name,
        instructions,
    })
}

/// Parses a listing stream whose records may span several packages and
/// binaries; each record supplies its own identity.
pub fn parse_corpus<R: BufRead>(reader: R, opts: ParseOptions) -> Result<Listing, CorpusError> {
    parse_impl(reader, opts, None)
}

/// Parses the listing of a single binary. Every record must name
/// `package_id` and `binary_id`.
pub fn parse_listing<R: BufRead>(
    reader: R,
    package_id: &str,
    binary_id: &str,
) -> Result<Vec<RawFunction>, CorpusError> {
    let listing = parse_impl(reader, ParseOptions::default(), Some((package_id, binary_id)))?;
    Ok(listing.functions)
}

/// [`parse_listing`] with explicit options; in lenient mode bad records are
/// reported in [`Listing::skipped`] instead of aborting.
pub fn parse_listing_with<R: BufRead>(
    reader: R,
    package_id: &str,
    binary_id: &str,
    opts: ParseOptions,
) -> Result<Listing, CorpusError> {
    parse_impl(reader, opts, Some((package_id, binary_id)))
}

fn parse_impl<R: BufRead>(
    reader: R,
    opts: ParseOptions,
    expected: Option<(&str, &str)>,
) -> Result<Listing, CorpusError> {
    let mut listing = Listing::default();
    let mut seen = HashSet::new();
    let mut ordinal = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_record(&line, ordinal, opts.strict).and_then(|f| match expected {
            Some((pkg, bin)) if f.package_id != pkg || f.binary_id != bin => Err(format!(
                "record belongs to {}/{}, expected {pkg}/{bin}",
                f.package_id, f.binary_id
            )),
            _ => Ok(f),
        });
        ordinal += 1;
        let func = match parsed {
            Ok(f) => f,
            Err(reason) if opts.strict => return Err(CorpusError::Malformed { line: line_no, reason }),
            Err(reason) => {
                log::warn!("skipping line {line_no}: {reason}");
                listing.skipped.push((line_no, reason));
                continue;
            }
        };
        if !seen.insert(func.function_id.clone()) {
            if opts.strict {
                return Err(CorpusError::DuplicateId {
                    line: line_no,
                    id: func.function_id,
                });
            }
            listing.skipped.push((line_no, format!("duplicate function id `{}`", func.function_id)));
            continue;
        }
        listing.functions.push(func);
    }
    Ok(listing)
}

/// Drops functions shorter than `min_len` and truncates longer than
/// `max_len` to their first `max_len` instructions.
///
/// Panics unless `1 <= min_len <= max_len`.
pub fn filter_by_length(fns: Vec<RawFunction>, min_len: usize, max_len: usize) -> Vec<RawFunction> {
    assert!(min_len >= 1 && max_len >= min_len, "invalid length bounds {min_len}..={max_len}");
    fns.into_iter()
        .filter(|f| f.len() >= min_len)
        .map(|mut f| {
            f.instructions.truncate(max_len);
            f
        })
        .collect()
}

/// Keeps the first function of every group whose normalized instruction
/// lists are identical, using the default normalizer.
pub fn deduplicate(fns: Vec<RawFunction>) -> Vec<RawFunction> {
    deduplicate_with(fns, &Normalizer::default())
}

pub fn deduplicate_with(fns: Vec<RawFunction>, normalizer: &Normalizer) -> Vec<RawFunction> {
    // bucket by hash, confirm against the full token sequence
    let mut buckets: HashMap<u64, Vec<Vec<String>>> = HashMap::new();
    let mut kept = Vec::new();
    for f in fns {
        let key: Vec<String> = f
            .instructions
            .iter()
            .map(|ins| normalizer.normalize(ins).into_string())
            .collect();
        let mut hasher = DefaultHasher::new();
        key.hash(&mut hasher);
        let bucket = buckets.entry(hasher.finish()).or_default();
        if bucket.contains(&key) {
            continue;
        }
        bucket.push(key);
        kept.push(f);
    }
    kept
}

/// Canonical JSON record for a function (sorted keys), as used in listings.
pub fn to_listing_value(f: &RawFunction) -> serde_json::Value {
    let instructions: Vec<serde_json::Value> = f
        .instructions
        .iter()
        .map(|ins| {
            let rec = InstructionRecord {
                mn: ins.mnemonic.clone(),
                ops: ins.operands.clone(),
                addr: ins.address,
            };
            serde_json::to_value(rec).expect("instruction serializes")
        })
        .collect();
    serde_json::json!({
        "package": f.package_id,
        "binary": f.binary_id,
        "address": f.address,
        "name": f.mangled_name,
        "instructions": instructions,
    })
}
