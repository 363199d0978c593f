//! Instruction normalization and the input-side vocabulary.
//!
//! Each instruction becomes a single token: the lowercased mnemonic, an
//! underscore, then the rewritten operands joined by commas. Large
//! immediates become `IMM`; memory operands that address a fixed location
//! (no base register, RIP-relative, or a displacement above the threshold)
//! become `MEM`. Everything else is kept verbatim.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::corpus::{Instruction, RawFunction};

pub const DEFAULT_IMM_THRESHOLD: u64 = 5000;
pub const IMM: &str = "IMM";
pub const MEM: &str = "MEM";

#[derive(Debug, Error)]
pub enum AsmError {
    #[error("cannot build an instruction vocabulary from an empty training set")]
    EmptyTrainingSet,
    #[error("immediate threshold must be positive")]
    ZeroThreshold,
    #[error("instruction vocabulary file, line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One instruction rendered as a whitespace-free token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormalizedInstruction(String);

impl NormalizedInstruction {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// Splits a rendered token back into an instruction (mnemonic up to the
    /// first `_`, operands separated by `,`, remaining `_` read as spaces).
    pub fn reparse(&self) -> Instruction {
        match self.0.split_once('_') {
            None => Instruction::new::<String>(&self.0, []),
            Some((mn, rest)) => Instruction::new(mn, rest.split(',').map(|op| op.replace('_', " "))),
        }
    }
}

impl fmt::Display for NormalizedInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Register names recognized inside operands (matched case-insensitively).
#[derive(Debug, Clone)]
pub struct RegisterSet {
    names: HashSet<String>,
}

impl RegisterSet {
    pub fn x86_64() -> Self {
        let mut names: HashSet<String> = HashSet::new();
        let mut add = |s: &str| {
            names.insert(s.to_string());
        };
        for r in ["ax", "bx", "cx", "dx", "si", "di", "bp", "sp"] {
            add(r);
            add(&format!("e{r}"));
            add(&format!("r{r}"));
        }
        for r in ["al", "bl", "cl", "dl", "ah", "bh", "ch", "dh", "sil", "dil", "bpl", "spl"] {
            add(r);
        }
        for i in 8..16 {
            for suffix in ["", "d", "w", "b"] {
                add(&format!("r{i}{suffix}"));
            }
        }
        for r in ["rip", "eip", "ip", "cs", "ds", "es", "fs", "gs", "ss", "rflags", "eflags"] {
            add(r);
        }
        for i in 0..32 {
            add(&format!("xmm{i}"));
            add(&format!("ymm{i}"));
            add(&format!("zmm{i}"));
        }
        for i in 0..8 {
            add(&format!("mm{i}"));
            add(&format!("st{i}"));
            add(&format!("st({i})"));
            add(&format!("k{i}"));
            add(&format!("dr{i}"));
        }
        add("st");
        for i in 0..16 {
            add(&format!("cr{i}"));
        }
        Self { names }
    }

    /// Adds architecture-specific register names.
    pub fn with_extra<I: IntoIterator<Item = S>, S: AsRef<str>>(mut self, extra: I) -> Self {
        self.names.extend(extra.into_iter().map(|s| s.as_ref().to_lowercase()));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(&name.to_lowercase())
    }
}

impl Default for RegisterSet {
    fn default() -> Self {
        Self::x86_64()
    }
}

#[derive(Debug, Clone)]
pub struct Normalizer {
    imm_threshold: u64,
    registers: RegisterSet,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            imm_threshold: DEFAULT_IMM_THRESHOLD,
            registers: RegisterSet::default(),
        }
    }
}

/// Parses an integer literal: decimal, `0x` hex, or assembler `h`-suffixed
/// hex, with an optional sign. Magnitudes beyond `u128` saturate.
pub fn parse_int_literal(text: &str) -> Option<i128> {
    let s = text.trim();
    let (neg, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let body = body.trim_start();
    if body.is_empty() {
        return None;
    }
    let (digits, radix) = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        (hex, 16)
    } else if let Some(hex) = body.strip_suffix(['h', 'H']) {
        if !hex.as_bytes().first()?.is_ascii_digit() {
            return None;
        }
        (hex, 16)
    } else {
        (body, 10)
    };
    if digits.is_empty() || !digits.chars().all(|c| c.is_digit(radix)) {
        return None;
    }
    let magnitude = u128::from_str_radix(digits, radix).unwrap_or(u128::MAX).min(i128::MAX as u128) as i128;
    Some(if neg { -magnitude } else { magnitude })
}

enum Term<'a> {
    Register(&'a str),
    Literal(i128),
    Other,
}

impl Normalizer {
    /// Panics if `imm_threshold` is zero.
    pub fn new(imm_threshold: u64) -> Self {
        assert!(imm_threshold > 0, "imm_threshold must be positive");
        Self {
            imm_threshold,
            registers: RegisterSet::default(),
        }
    }

    pub fn try_new(imm_threshold: u64, registers: RegisterSet) -> Result<Self, AsmError> {
        if imm_threshold == 0 {
            return Err(AsmError::ZeroThreshold);
        }
        Ok(Self {
            imm_threshold,
            registers,
        })
    }

    pub fn imm_threshold(&self) -> u64 {
        self.imm_threshold
    }

    fn exceeds(&self, value: i128) -> bool {
        value.unsigned_abs() > u128::from(self.imm_threshold)
    }

    fn classify_term<'a>(&self, term: &'a str) -> Term<'a> {
        let term = term.trim();
        if self.registers.contains(term) {
            return Term::Register(term);
        }
        if let Some(v) = parse_int_literal(term) {
            return Term::Literal(v);
        }
        // scaled index, e.g. rbx*4
        if let Some((a, b)) = term.split_once('*') {
            if self.registers.contains(a.trim()) && parse_int_literal(b).is_some() {
                return Term::Register(a.trim());
            }
            if self.registers.contains(b.trim()) && parse_int_literal(a).is_some() {
                return Term::Register(b.trim());
            }
        }
        Term::Other
    }

    /// Rewrites a bracketed memory operand. `None` when the expression
    /// cannot be parsed.
    fn memory_operand(&self, inner: &str) -> Option<bool> {
        let mut terms = Vec::new();
        let mut start = 0;
        for (i, c) in inner.char_indices() {
            if (c == '+' || c == '-') && i > 0 {
                terms.push(&inner[start..i]);
                start = i;
            }
        }
        terms.push(&inner[start..]);
        let mut has_register = false;
        let mut rip_relative = false;
        let mut large_disp = false;
        for raw in terms {
            let t = raw.trim();
            let (sign, body) = match t.strip_prefix('-') {
                Some(rest) => (-1, rest),
                None => (1, t.strip_prefix('+').unwrap_or(t)),
            };
            if body.trim().is_empty() {
                return None;
            }
            match self.classify_term(body) {
                Term::Register(r) => {
                    has_register = true;
                    let r = r.to_ascii_lowercase();
                    if r == "rip" || r == "eip" {
                        rip_relative = true;
                    }
                }
                Term::Literal(v) => large_disp |= self.exceeds(sign * v),
                Term::Other => {}
            }
        }
        Some(!has_register || rip_relative || large_disp)
    }

    pub fn normalize_operand<'a>(&self, operand: &'a str) -> Cow<'a, str> {
        let op = operand.trim();
        if let Some(open) = op.find('[') {
            let Some(close) = op.rfind(']').filter(|&c| c > open) else {
                log::debug!("unparseable memory operand {operand:?}");
                return Cow::Borrowed(op);
            };
            return match self.memory_operand(&op[open + 1..close]) {
                Some(true) => Cow::Borrowed(MEM),
                Some(false) => Cow::Borrowed(op),
                None => {
                    log::debug!("unparseable memory expression {operand:?}");
                    Cow::Borrowed(op)
                }
            };
        }
        if self.registers.contains(op) {
            return Cow::Borrowed(op);
        }
        match parse_int_literal(op) {
            Some(v) if self.exceeds(v) => Cow::Borrowed(IMM),
            _ => Cow::Borrowed(op),
        }
    }

    pub fn normalize(&self, ins: &Instruction) -> NormalizedInstruction {
        let mut out = ins.mnemonic.to_lowercase();
        if !ins.operands.is_empty() {
            out.push('_');
            let ops: Vec<Cow<str>> = ins.operands.iter().map(|op| self.normalize_operand(op)).collect();
            out.push_str(&ops.join(","));
        }
        NormalizedInstruction(out.split_whitespace().collect::<Vec<_>>().join("_"))
    }

    pub fn normalize_function(&self, f: &RawFunction) -> Vec<NormalizedInstruction> {
        f.instructions.iter().map(|ins| self.normalize(ins)).collect()
    }
}

/// Normalizes one instruction with the x86-64 register table.
pub fn normalize_instruction(ins: &Instruction, imm_threshold: u64) -> NormalizedInstruction {
    Normalizer::new(imm_threshold).normalize(ins)
}

pub const INSTR_PAD: u32 = 0;
pub const INSTR_UNK: u32 = 1;
const INSTR_RESERVED: usize = 2;

/// Input-side vocabulary: `PAD`=0, `UNK`=1, then tokens by descending
/// training frequency with lexicographic tie-break.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrVocabulary {
    min_frequency: u64,
    tokens: Vec<(String, u64)>,
    index: HashMap<String, u32>,
}

impl InstrVocabulary {
    fn from_sorted(min_frequency: u64, tokens: Vec<(String, u64)>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), (i + INSTR_RESERVED) as u32))
            .collect();
        Self {
            min_frequency,
            tokens,
            index,
        }
    }

    pub fn min_frequency(&self) -> u64 {
        self.min_frequency
    }

    /// Size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + INSTR_RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(INSTR_UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        match id {
            INSTR_PAD => Some("PAD"),
            INSTR_UNK => Some("UNK"),
            _ => self.tokens.get(id as usize - INSTR_RESERVED).map(|(t, _)| t.as_str()),
        }
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.tokens
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#min_freq={}", self.min_frequency)?;
        for (token, count) in &self.tokens {
            writeln!(out, "{token}\t{count}")?;
        }
        Ok(())
    }

    pub fn to_tsv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, AsmError> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.ok_or(AsmError::Format {
            line: 1,
            reason: "missing header".into(),
        })?;
        let min_frequency = header
            .strip_prefix("#min_freq=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| AsmError::Format {
                line: 1,
                reason: format!("bad header {header:?}"),
            })?;
        let mut tokens = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| AsmError::Format {
                line: i + 2,
                reason: reason.to_string(),
            };
            let (token, count) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>count"))?;
            let count = count.parse().map_err(|_| bad("count is not an integer"))?;
            tokens.push((token.to_string(), count));
        }
        Ok(Self::from_sorted(min_frequency, tokens))
    }

    pub fn digest(&self) -> String {
        crate::sha256_hex(self.to_tsv_string().as_bytes())
    }
}

/// Counts tokens over the training split and keeps those seen at least
/// `min_frequency` times.
pub fn build_instruction_vocabulary<'a, I, F>(train_fns: I, min_frequency: u64) -> Result<InstrVocabulary, AsmError>
where
    I: IntoIterator<Item = F>,
    F: IntoIterator<Item = &'a NormalizedInstruction>,
{
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut n_fns = 0usize;
    for f in train_fns {
        n_fns += 1;
        for ins in f {
            *counts.entry(ins.as_str()).or_default() += 1;
        }
    }
    if n_fns == 0 {
        return Err(AsmError::EmptyTrainingSet);
    }
    let mut tokens: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_frequency)
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    tokens.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(InstrVocabulary::from_sorted(min_frequency, tokens))
}

/// Normalizes, maps to ids (unknown tokens to `UNK`) and truncates.
pub fn encode_function(f: &RawFunction, vocab: &InstrVocabulary, normalizer: &Normalizer, max_len: usize) -> Vec<u32> {
    f.instructions
        .iter()
        .take(max_len)
        .map(|ins| vocab.encode(normalizer.normalize(ins).as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(mn: &str, ops: &[&str]) -> String {
        normalize_instruction(&Instruction::new(mn, ops.iter().copied()), 5000).into_string()
    }

    #[test]
    fn reference_examples() {
        assert_eq!(norm("mov", &["EBX", "6000"]), "mov_EBX,IMM");
        assert_eq!(norm("mov", &["EBX", "[0x3435423]"]), "mov_EBX,MEM");
        assert_eq!(norm("mov", &["EAX", "[EBP-8]"]), "mov_EAX,[EBP-8]");
    }

    #[test]
    fn threshold_boundary() {
        assert_eq!(norm("mov", &["eax", "5000"]), "mov_eax,5000");
        assert_eq!(norm("mov", &["eax", "5001"]), "mov_eax,IMM");
        assert_eq!(norm("mov", &["eax", "-5000"]), "mov_eax,-5000");
        assert_eq!(norm("mov", &["eax", "-5001"]), "mov_eax,IMM");
        assert_eq!(norm("mov", &["eax", "[rbp-5000]"]), "mov_eax,[rbp-5000]");
        assert_eq!(norm("mov", &["eax", "[rbp-5001]"]), "mov_eax,MEM");
        assert_eq!(norm("mov", &["eax", "0x1388"]), "mov_eax,0x1388");
        assert_eq!(norm("mov", &["eax", "0x1389"]), "mov_eax,IMM");
    }

    #[test]
    fn operand_forms() {
        assert_eq!(norm("MOV", &["rax", "qword ptr [rbp-0x18]"]), "mov_rax,qword_ptr_[rbp-0x18]");
        assert_eq!(norm("mov", &["rax", "qword ptr [rip+0x2f5a]"]), "mov_rax,MEM");
        assert_eq!(norm("lea", &["rdx", "[rax+rbx*4+0x10]"]), "lea_rdx,[rax+rbx*4+0x10]");
        assert_eq!(norm("lea", &["rdx", "[rax+rbx*4+0x100000]"]), "lea_rdx,MEM");
        assert_eq!(norm("mov", &["rax", "fs:[0x28]"]), "mov_rax,MEM");
        assert_eq!(norm("mov", &["eax", "[rbp+var_8]"]), "mov_eax,[rbp+var_8]");
        assert_eq!(norm("call", &["0x401a20"]), "call_IMM");
        assert_eq!(norm("jmp", &["loc_401000"]), "jmp_loc_401000");
        assert_eq!(norm("and", &["eax", "0FFFFFh"]), "and_eax,IMM");
        assert_eq!(norm("ret", &[]), "ret");
    }

    #[test]
    fn unbalanced_bracket_kept() {
        assert_eq!(norm("mov", &["eax", "[rbp-8"]), "mov_eax,[rbp-8");
    }

    #[test]
    fn extra_registers() {
        let n = Normalizer::try_new(5000, RegisterSet::x86_64().with_extra(["X9"])).unwrap();
        let ins = Instruction::new("ldr", ["x0", "[x9]"]);
        assert_eq!(n.normalize(&ins).as_str(), "ldr_x0,[x9]");
        let plain = Normalizer::default().normalize(&ins);
        assert_eq!(plain.as_str(), "ldr_x0,MEM");
        assert!(Normalizer::try_new(0, RegisterSet::default()).is_err());
    }

    #[test]
    fn literal_grammar() {
        assert_eq!(parse_int_literal("0x10"), Some(16));
        assert_eq!(parse_int_literal("-0x10"), Some(-16));
        assert_eq!(parse_int_literal("1Ah"), Some(26));
        assert_eq!(parse_int_literal("ah"), None);
        assert_eq!(parse_int_literal("12"), Some(12));
        assert_eq!(parse_int_literal("1x"), None);
        assert_eq!(parse_int_literal("0xffffffffffffffffffffffffffffffffff").map(|v| v > 0), Some(true));
    }

    fn toks(list: &[&str]) -> Vec<NormalizedInstruction> {
        list.iter().map(|s| NormalizedInstruction(s.to_string())).collect()
    }

    #[test]
    fn vocabulary_thresholds_and_order() {
        let fns = [toks(&["b", "a", "c", "once"]), toks(&["a", "b", "c", "c"])];
        let v = build_instruction_vocabulary(fns.iter(), 2).unwrap();
        assert_eq!(v.id("c"), Some(2));
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.id("b"), Some(4));
        assert_eq!(v.id("once"), None);
        assert_eq!(v.encode("once"), INSTR_UNK);
        let all = build_instruction_vocabulary(fns.iter(), 1).unwrap();
        assert_eq!(all.len(), 4 + 2);
    }

    #[test]
    fn tie_break_matches_brute_force() {
        // ten-token corpus with ties, ordering recomputed by exhaustive ranking
        let corpus = toks(&["k", "d", "k", "a", "d", "z", "a", "m", "z", "q"]);
        let v = build_instruction_vocabulary([corpus.iter()], 1).unwrap();
        let distinct: Vec<&str> = {
            let mut d: Vec<&str> = corpus.iter().map(|t| t.as_str()).collect();
            d.sort();
            d.dedup();
            d
        };
        for t in &distinct {
            let count = |x: &str| corpus.iter().filter(|c| c.as_str() == x).count();
            // rank = number of tokens that must precede t
            let rank = distinct
                .iter()
                .filter(|u| count(u) > count(t) || (count(u) == count(t) && u < &t))
                .count();
            assert_eq!(v.id(t), Some(rank as u32 + 2), "token {t}");
        }
    }

    #[test]
    fn empty_training_set() {
        let none: Vec<Vec<NormalizedInstruction>> = Vec::new();
        assert!(matches!(build_instruction_vocabulary(none.iter(), 2), Err(AsmError::EmptyTrainingSet)));
    }

    #[test]
    fn tsv_round_trip() {
        let fns = [toks(&["mov_eax,IMM", "ret", "ret"])];
        let v = build_instruction_vocabulary(fns.iter(), 1).unwrap();
        let text = v.to_tsv_string();
        assert!(text.starts_with("#min_freq=1\n"));
        let back = InstrVocabulary::read_tsv(text.as_bytes()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn encode_truncates_and_marks_unknown() {
        let f = RawFunction {
            package_id: "p".into(),
            binary_id: "b".into(),
            function_id: "p/b/0".into(),
            address: None,
            mangled_name: "f".into(),
            instructions: (0..600).map(|i| Instruction::new("mov", ["eax".to_string(), (i % 3).to_string()])).collect(),
        };
        let n = Normalizer::default();
        let fns = [toks(&["mov_eax,0", "mov_eax,1"])];
        let v = build_instruction_vocabulary(fns.iter(), 1).unwrap();
        let ids = encode_function(&f, &v, &n, 500);
        assert_eq!(ids.len(), 500);
        assert_eq!(ids[2], INSTR_UNK);
        assert_ne!(ids[0], INSTR_UNK);
    }
}
