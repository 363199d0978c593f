//! Synthetic disassembly corpora with a learnable name/code relationship.
//!
//! Every word of a fixed lexicon owns a short instruction motif. A
//! function named `readFile` contains the motif of `read` followed by the
//! motif of `file`, wrapped in a prologue and epilogue and sprinkled with
//! filler instructions. An alternative "unoptimized" code style renames
//! registers and spills results to the stack; mixing styles in different
//! proportions gives a general corpus and a shifted domain corpus.

use std::collections::HashSet;

use crate::corpus::{Instruction, RawFunction};
use crate::rng::{derive_seed, fnv1a64, XorShiftRng};

pub const LEXICON: [&str; 64] = [
    "get", "set", "read", "write", "open", "close", "init", "free", "alloc", "parse", "print", "hash", "list", "node",
    "tree", "file", "buffer", "string", "key", "value", "size", "copy", "find", "insert", "remove", "push", "pop",
    "load", "save", "send", "recv", "lock", "unlock", "sort", "match", "check", "update", "create", "destroy",
    "reset", "start", "stop", "flush", "scan", "append", "delete", "lookup", "count", "format", "error", "config",
    "socket", "thread", "queue", "table", "entry", "path", "dir", "user", "time", "data", "block", "cache", "stream",
];

/// How to draw names and code for one corpus.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub packages: usize,
    pub functions_per_package: usize,
    /// Package ids are `{package_prefix}{index:03}`.
    pub package_prefix: String,
    /// Indices into [`LEXICON`] that names may use.
    pub words: std::ops::Range<usize>,
    pub max_name_words: usize,
    /// Probability that a function uses the unoptimized code style.
    pub shifted_style_prob: f64,
    /// Add foreign-language, unparseable, too-short and duplicate records.
    pub junk: bool,
    pub seed: u64,
}

impl SynthConfig {
    /// The 100-function corpus used for memorization checks.
    pub fn toy() -> Self {
        Self {
            packages: 10,
            functions_per_package: 10,
            package_prefix: "toy".into(),
            words: 0..24,
            max_name_words: 3,
            shifted_style_prob: 0.0,
            junk: false,
            seed: 0,
        }
    }

    /// A broad corpus over the whole lexicon, mostly in the default style.
    pub fn general(seed: u64) -> Self {
        Self {
            packages: 40,
            functions_per_package: 15,
            package_prefix: "gen".into(),
            words: 0..LEXICON.len(),
            max_name_words: 3,
            shifted_style_prob: 0.1,
            junk: true,
            seed,
        }
    }

    /// A narrow domain in the shifted style.
    pub fn domain(seed: u64) -> Self {
        Self {
            packages: 12,
            functions_per_package: 12,
            package_prefix: "dom".into(),
            words: 0..32,
            max_name_words: 3,
            shifted_style_prob: 1.0,
            junk: false,
            seed,
        }
    }
}

const MOTIF_POOL: [(&str, &[&str]); 24] = [
    ("mov", &["eax", "{k}"]),
    ("mov", &["edi", "{k}"]),
    ("mov", &["rsi", "rax"]),
    ("mov", &["rdx", "qword ptr [rdi+{d}]"]),
    ("mov", &["qword ptr [rax+{d}]", "rcx"]),
    ("lea", &["rdi", "[rip+{addr}]"]),
    ("lea", &["rax", "[rdi+{d}]"]),
    ("cmp", &["eax", "{k}"]),
    ("cmp", &["rdi", "rsi"]),
    ("test", &["eax", "eax"]),
    ("add", &["rax", "{k}"]),
    ("sub", &["rsi", "{k}"]),
    ("and", &["eax", "{k}"]),
    ("or", &["ecx", "{k}"]),
    ("xor", &["edx", "edx"]),
    ("shl", &["rax", "{k}"]),
    ("shr", &["rdx", "{k}"]),
    ("imul", &["rax", "rsi"]),
    ("movzx", &["eax", "byte ptr [rdi+{d}]"]),
    ("call", &["{addr}"]),
    ("jz", &["loc_{k}"]),
    ("jnz", &["loc_{k}"]),
    ("cmovz", &["rax", "rdx"]),
    ("sete", &["al"]),
];

const FILLER: [(&str, &[&str]); 6] = [
    ("nop", &[]),
    ("mov", &["rbx", "rdi"]),
    ("push", &["r12"]),
    ("pop", &["r12"]),
    ("mov", &["r12", "rsi"]),
    ("xchg", &["ax", "ax"]),
];

/// Register renaming used by the unoptimized style.
const SHIFT_REGS: [(&str, &str); 8] = [
    ("eax", "ecx"),
    ("rax", "rcx"),
    ("edi", "esi"),
    ("rdi", "rbx"),
    ("rsi", "r8"),
    ("rdx", "r9"),
    ("edx", "r9d"),
    ("ecx", "eax"),
];

fn render(template: &str, k: u64, d: u64, addr: u64) -> String {
    template
        .replace("{k}", &k.to_string())
        .replace("{d}", &format!("0x{d:x}"))
        .replace("{addr}", &format!("0x{addr:x}"))
}

fn shift_operand(op: &str) -> String {
    // whole-word register renames
    let mut out = String::with_capacity(op.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        let renamed = SHIFT_REGS.iter().find(|(from, _)| from == word).map(|(_, to)| *to);
        out.push_str(renamed.unwrap_or(word));
        word.clear();
    };
    for c in op.chars() {
        if c.is_ascii_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// The fixed instruction motif of a lexicon word.
pub fn motif(word: &str) -> Vec<Instruction> {
    let mut rng = XorShiftRng::new(fnv1a64(word.as_bytes()));
    let len = 3 + rng.below(2);
    (0..len)
        .map(|_| {
            let (mn, ops) = MOTIF_POOL[rng.below(MOTIF_POOL.len())];
            let k = rng.below(16) as u64;
            let d = 8 * rng.below(8) as u64;
            let addr = 0x400000 + rng.below(0x10000) as u64;
            Instruction::new(mn, ops.iter().map(|t| render(t, k, d, addr)))
        })
        .collect()
}

fn shifted(ins: &Instruction) -> Instruction {
    Instruction::new(&ins.mnemonic, ins.operands.iter().map(|op| shift_operand(op)))
}

fn function_body(words: &[&str], shifted_style: bool, rng: &mut XorShiftRng) -> Vec<Instruction> {
    let mut body = vec![Instruction::new("push", ["rbp"]), Instruction::new("mov", ["rbp", "rsp"])];
    if shifted_style {
        body.push(Instruction::new("sub", ["rsp", "0x20"]));
    }
    for (slot, w) in words.iter().enumerate() {
        for _ in 0..rng.below(3) {
            let (mn, ops) = FILLER[rng.below(FILLER.len())];
            body.push(Instruction::new(mn, ops.iter().copied()));
        }
        for ins in motif(w) {
            body.push(if shifted_style { shifted(&ins) } else { ins });
        }
        if shifted_style {
            body.push(Instruction::new("mov", [format!("qword ptr [rbp-0x{:x}]", 8 * (slot + 1)), "rcx".into()]));
        }
    }
    if shifted_style {
        body.push(Instruction::new("leave", Vec::<String>::new()));
    } else {
        body.push(Instruction::new("pop", ["rbp"]));
    }
    body.push(Instruction::new("ret", Vec::<String>::new()));
    body
}

fn body_key(body: &[Instruction]) -> String {
    body.iter().map(|i| format!("{}\t{}\n", i.mnemonic, i.operands.join(","))).collect()
}

fn render_name(words: &[&str], package_tag: Option<&str>, rng: &mut XorShiftRng) -> String {
    let mut parts: Vec<String> = package_tag.into_iter().map(str::to_string).collect();
    parts.extend(words.iter().map(|w| w.to_string()));
    let camel = |parts: &[String], upper_first: bool| -> String {
        parts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == 0 && !upper_first {
                    p.clone()
                } else {
                    let mut c = p.chars();
                    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
                }
            })
            .collect()
    };
    match rng.below(4) {
        0 => parts.join("_"),
        1 => camel(&parts, false),
        2 => camel(&parts, true),
        _ => {
            let ident = parts.join("_");
            let class = "Impl";
            format!("_ZN{}{}{}{}Ev", class.len(), class, ident.len(), ident)
        }
    }
}

/// Generates a listing corpus. Records are valid listing functions; with
/// `junk` some are meant to be dropped by later pipeline stages.
pub fn generate(cfg: &SynthConfig) -> Vec<RawFunction> {
    let mut rng = XorShiftRng::new(derive_seed(cfg.seed, &format!("synth/{}", cfg.package_prefix)));
    let lexicon = &LEXICON[cfg.words.clone()];
    let mut out = Vec::new();
    // every generated body is distinct so deduplication only removes the
    // deliberate junk duplicates
    let mut seen = HashSet::new();
    for p in 0..cfg.packages {
        let package = format!("{}{p:03}", cfg.package_prefix);
        // half of the packages prefix their names with a private tag
        let tag = (rng.below(2) == 0).then(|| format!("xq{}", (b'a' + (p % 26) as u8) as char));
        let mut address = 0x401000u64;
        for _ in 0..cfg.functions_per_package {
            let (words, instructions) = loop {
                let n_words = 1 + rng.below(cfg.max_name_words);
                let mut words: Vec<&str> = Vec::with_capacity(n_words);
                while words.len() < n_words {
                    let w = lexicon[rng.below(lexicon.len())];
                    if !words.contains(&w) {
                        words.push(w);
                    }
                }
                let style = rng.next_f64() < cfg.shifted_style_prob;
                let body = function_body(&words, style, &mut rng);
                if seen.insert(body_key(&body)) {
                    break (words, body);
                }
            };
            let name = render_name(&words, tag.as_deref(), &mut rng);
            out.push(RawFunction {
                function_id: RawFunction::make_id(&package, "bin", Some(address), 0),
                package_id: package.clone(),
                binary_id: "bin".into(),
                address: Some(address),
                mangled_name: name,
                instructions,
            });
            address += 0x100;
        }
        if cfg.junk {
            let mut extra = |name: String, instructions: Vec<Instruction>, out: &mut Vec<RawFunction>| {
                out.push(RawFunction {
                    function_id: RawFunction::make_id(&package, "bin", Some(address), 0),
                    package_id: package.clone(),
                    binary_id: "bin".into(),
                    address: Some(address),
                    mangled_name: name,
                    instructions,
                });
                address += 0x100;
            };
            let mut fresh_body = |rng: &mut XorShiftRng| loop {
                let body = function_body(&["get", lexicon[rng.below(lexicon.len())]], false, rng);
                if seen.insert(body_key(&body)) {
                    break body;
                }
            };
            let handler = fresh_body(&mut rng);
            let vtable = fresh_body(&mut rng);
            extra(format!("main.handler·{p}"), handler, &mut out);
            extra("_ZTV6Widget".into(), vtable, &mut out);
            extra("get".into(), vec![Instruction::new("ret", Vec::<String>::new())], &mut out);
            if let Some(first) = out.iter().find(|f| f.package_id == package).cloned() {
                extra(first.mangled_name, first.instructions, &mut out);
            }
        }
    }
    out
}

/// Writes functions as listing JSON lines.
pub fn write_listing<W: std::io::Write>(mut out: W, fns: &[RawFunction]) -> std::io::Result<()> {
    for f in fns {
        serde_json::to_writer(&mut out, &crate::corpus::to_listing_value(f))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
