//! Recovery of the unqualified function name from a linker symbol.
//!
//! Only the part of the Itanium C++ ABI grammar that leads to the final
//! source-name component is implemented: nested names, substitutions,
//! template arguments (parsed structurally and discarded), constructors,
//! destructors, operators, local names and thunks. The function's
//! parameter types are never parsed.

use regex::Regex;

/// Outcome of demangling one symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DemangleResult {
    /// An unmangled C identifier.
    Plain(String),
    /// An Itanium-mangled symbol; holds the base identifier.
    Demangled(String),
    /// Symbol produced by a non-C/C++ toolchain.
    ForeignLanguage,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DemangleOutcome {
    Plain,
    Demangled,
    ForeignLanguage,
    Unparseable,
}

impl DemangleResult {
    pub fn outcome(&self) -> DemangleOutcome {
        match self {
            Self::Plain(_) => DemangleOutcome::Plain,
            Self::Demangled(_) => DemangleOutcome::Demangled,
            Self::ForeignLanguage => DemangleOutcome::ForeignLanguage,
            Self::Unparseable => DemangleOutcome::Unparseable,
        }
    }

    pub fn base_identifier(&self) -> Option<&str> {
        match self {
            Self::Plain(s) | Self::Demangled(s) => Some(s),
            _ => None,
        }
    }
}

/// Go (`·`, `go.` prefix) and GHC z-encoding markers.
pub const DEFAULT_FOREIGN_PATTERNS: [&str; 4] = ["·", r"^go\.", "_ghc", "zm"];

#[derive(Debug, Clone)]
pub struct Demangler {
    foreign: Vec<Regex>,
    clone_suffix: Regex,
}

impl Default for Demangler {
    fn default() -> Self {
        Self::new(DEFAULT_FOREIGN_PATTERNS).expect("default patterns compile")
    }
}

impl Demangler {
    pub fn new<I, S>(foreign_patterns: I) -> Result<Self, regex::Error>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let foreign = foreign_patterns
            .into_iter()
            .map(|p| Regex::new(p.as_ref()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            foreign,
            clone_suffix: Regex::new(r"(\.(isra|constprop|part|cold|clone|lto_priv|localalias)(\.\d+)*)+$")
                .expect("static regex"),
        })
    }

    pub fn demangle(&self, raw_name: &str) -> DemangleResult {
        // symbol versioning (`@GLIBC_2.2.5`, `@plt`) is not part of the name
        let name = raw_name.split('@').next().unwrap_or_default().trim();
        if name.is_empty() {
            return DemangleResult::Unparseable;
        }
        if let Some(rest) = name.strip_prefix("_Z") {
            return match Parser::new(rest).encoding() {
                Some(base) if !base.is_empty() => DemangleResult::Demangled(base),
                _ => DemangleResult::Unparseable,
            };
        }
        if self.foreign.iter().any(|re| re.is_match(name)) {
            return DemangleResult::ForeignLanguage;
        }
        let stripped = self.clone_suffix.replace(name, "");
        if is_c_identifier(&stripped) {
            DemangleResult::Plain(stripped.into_owned())
        } else {
            DemangleResult::Unparseable
        }
    }
}

/// Demangles with the default foreign-language patterns.
pub fn demangle(raw_name: &str) -> DemangleResult {
    Demangler::default().demangle(raw_name)
}

fn is_c_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

const OPERATORS: [(&str, &str); 48] = [
    ("nw", "new"),
    ("na", "new[]"),
    ("dl", "delete"),
    ("da", "delete[]"),
    ("ps", "+"),
    ("ng", "-"),
    ("ad", "&"),
    ("de", "*"),
    ("co", "~"),
    ("pl", "+"),
    ("mi", "-"),
    ("ml", "*"),
    ("dv", "/"),
    ("rm", "%"),
    ("an", "&"),
    ("or", "|"),
    ("eo", "^"),
    ("aS", "="),
    ("pL", "+="),
    ("mI", "-="),
    ("mL", "*="),
    ("dV", "/="),
    ("rM", "%="),
    ("aN", "&="),
    ("oR", "|="),
    ("eO", "^="),
    ("ls", "<<"),
    ("rs", ">>"),
    ("lS", "<<="),
    ("rS", ">>="),
    ("eq", "=="),
    ("ne", "!="),
    ("lt", "<"),
    ("gt", ">"),
    ("le", "<="),
    ("ge", ">="),
    ("ss", "<=>"),
    ("nt", "!"),
    ("aa", "&&"),
    ("oo", "||"),
    ("pp", "++"),
    ("mm", "--"),
    ("cm", ","),
    ("pm", "->*"),
    ("pt", "->"),
    ("cl", "()"),
    ("ix", "[]"),
    ("qu", "?"),
];

/// Result of parsing one name component.
enum Component {
    Ident(String),
    CtorDtor,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    /// Last identifier of every substitution candidate, in ABI order.
    subs: Vec<String>,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Self {
            s: s.as_bytes(),
            pos: 0,
            subs: Vec::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.s.get(self.pos + off).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Option<()> {
        self.eat(c).then_some(())
    }

    fn number(&mut self) -> Option<usize> {
        self.eat(b'n');
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos]).ok()?.parse().ok()
    }

    fn source_name(&mut self) -> Option<String> {
        let len = self.number()?;
        let end = self.pos.checked_add(len)?;
        let bytes = self.s.get(self.pos..end)?;
        self.pos = end;
        let ident = std::str::from_utf8(bytes).ok()?;
        // anonymous namespaces print as "(anonymous namespace)"
        if ident.starts_with("_GLOBAL__N") {
            return Some("(anonymous namespace)".into());
        }
        Some(ident.to_string())
    }

    /// `<encoding>`: returns the base identifier of the function name.
    fn encoding(&mut self) -> Option<String> {
        match (self.peek()?, self.peek_at(1)) {
            (b'T', Some(b'h')) => {
                self.pos += 2;
                self.number()?;
                self.expect(b'_')?;
                self.encoding()
            }
            (b'T', Some(b'v')) => {
                self.pos += 2;
                self.number()?;
                self.expect(b'_')?;
                self.number()?;
                self.expect(b'_')?;
                self.encoding()
            }
            (b'T', Some(b'c')) => {
                self.pos += 2;
                self.call_offset()?;
                self.call_offset()?;
                self.encoding()
            }
            // vtables, typeinfo, guard variables, TLS wrappers: not functions
            (b'T', _) | (b'G', _) => None,
            _ => self.name(),
        }
    }

    fn call_offset(&mut self) -> Option<()> {
        match self.peek()? {
            b'h' => {
                self.pos += 1;
                self.number()?;
                self.expect(b'_')
            }
            b'v' => {
                self.pos += 1;
                self.number()?;
                self.expect(b'_')?;
                self.number()?;
                self.expect(b'_')
            }
            _ => None,
        }
    }

    fn name(&mut self) -> Option<String> {
        match self.peek()? {
            b'N' => self.nested_name(),
            b'Z' => self.local_name(),
            b'S' if self.peek_at(1) == Some(b't') => {
                self.pos += 2;
                let ident = self.unqualified_ident(None)?;
                if self.peek() == Some(b'I') {
                    self.subs.push(ident.clone());
                    self.template_args()?;
                }
                Some(ident)
            }
            b'S' => {
                // unscoped template name via substitution
                let ident = self.substitution()?;
                if self.peek() != Some(b'I') {
                    return None;
                }
                self.template_args()?;
                Some(ident)
            }
            _ => {
                let ident = self.unqualified_ident(None)?;
                if self.peek() == Some(b'I') {
                    self.subs.push(ident.clone());
                    self.template_args()?;
                }
                Some(ident)
            }
        }
    }

    fn local_name(&mut self) -> Option<String> {
        self.expect(b'Z')?;
        self.encoding()?;
        // the enclosing function's parameter types sit between the
        // encoding's name and `E`; skip them as types
        while self.peek()? != b'E' {
            self.ty()?;
        }
        self.expect(b'E')?;
        if self.eat(b's') {
            return Some("string literal".into());
        }
        let ident = self.name()?;
        if self.eat(b'_') {
            self.eat(b'_');
            self.number()?;
            self.eat(b'_');
        }
        Some(ident)
    }

    fn nested_name(&mut self) -> Option<String> {
        self.expect(b'N')?;
        while matches!(self.peek()?, b'r' | b'V' | b'K') {
            self.pos += 1;
        }
        if matches!(self.peek()?, b'R' | b'O') {
            self.pos += 1;
        }
        let mut last: Option<String> = None;
        loop {
            match self.peek()? {
                b'E' => {
                    self.pos += 1;
                    // the complete nested name is not a substitution candidate
                    self.subs.pop();
                    return last;
                }
                b'S' if self.peek_at(1) == Some(b't') => {
                    self.pos += 2;
                    last = Some("std".into());
                    continue;
                }
                b'S' => {
                    last = Some(self.substitution()?);
                    continue;
                }
                b'T' => {
                    self.template_param()?;
                    last = Some(String::new());
                }
                b'I' => {
                    last.as_ref()?;
                    self.template_args()?;
                }
                b'D' if matches!(self.peek_at(1), Some(b't' | b'T')) => return None,
                _ => {
                    let ident = self.unqualified_ident(last.as_deref())?;
                    last = Some(ident);
                }
            }
            self.subs.push(last.clone().unwrap_or_default());
        }
    }

    /// `<unqualified-name>`, with ctor/dtor names resolved to `enclosing`.
    fn unqualified_ident(&mut self, enclosing: Option<&str>) -> Option<String> {
        self.eat(b'L');
        let comp = match self.peek()? {
            b'0'..=b'9' => Component::Ident(self.source_name()?),
            b'C' => {
                self.pos += 1;
                self.eat(b'I');
                match self.peek()? {
                    b'1'..=b'5' => self.pos += 1,
                    _ => return None,
                }
                Component::CtorDtor
            }
            b'D' => {
                self.pos += 1;
                match self.peek()? {
                    b'0' | b'1' | b'2' | b'4' | b'5' => self.pos += 1,
                    _ => return None,
                }
                Component::CtorDtor
            }
            b'U' => return None,
            b'a'..=b'z' => Component::Ident(self.operator_name()?),
            _ => return None,
        };
        while self.eat(b'B') {
            self.source_name()?;
        }
        match comp {
            Component::Ident(s) => Some(s),
            Component::CtorDtor => enclosing.filter(|e| !e.is_empty()).map(str::to_string),
        }
    }

    fn operator_name(&mut self) -> Option<String> {
        let code = self.s.get(self.pos..self.pos + 2)?;
        let code = std::str::from_utf8(code).ok()?;
        match code {
            "cv" => {
                self.pos += 2;
                self.ty()?;
                Some("operator".into())
            }
            "li" => {
                self.pos += 2;
                let suffix = self.source_name()?;
                Some(format!("operator\"\" {suffix}"))
            }
            _ if code.starts_with('v') && code.as_bytes()[1].is_ascii_digit() => {
                self.pos += 2;
                self.source_name()
            }
            _ => {
                let (_, sym) = OPERATORS.iter().find(|(c, _)| *c == code)?;
                self.pos += 2;
                Some(format!("operator{sym}"))
            }
        }
    }

    fn seq_id(&mut self) -> Option<usize> {
        if self.eat(b'_') {
            return Some(0);
        }
        let mut value = 0usize;
        let mut any = false;
        while let Some(c) = self.peek() {
            let digit = match c {
                b'0'..=b'9' => c - b'0',
                b'A'..=b'Z' => c - b'A' + 10,
                b'_' => break,
                _ => return None,
            };
            value = value.checked_mul(36)?.checked_add(usize::from(digit))?;
            any = true;
            self.pos += 1;
        }
        self.expect(b'_')?;
        any.then_some(value + 1)
    }

    fn substitution(&mut self) -> Option<String> {
        self.expect(b'S')?;
        let special = match self.peek()? {
            b'a' => Some("allocator"),
            b'b' => Some("basic_string"),
            b's' => Some("string"),
            b'i' => Some("istream"),
            b'o' => Some("ostream"),
            b'd' => Some("iostream"),
            _ => None,
        };
        if let Some(name) = special {
            self.pos += 1;
            return Some(name.into());
        }
        let idx = self.seq_id()?;
        self.subs.get(idx).cloned()
    }

    fn template_param(&mut self) -> Option<()> {
        self.expect(b'T')?;
        self.seq_id().map(|_| ())
    }

    fn template_args(&mut self) -> Option<()> {
        self.expect(b'I')?;
        while !self.eat(b'E') {
            self.template_arg()?;
        }
        Some(())
    }

    fn template_arg(&mut self) -> Option<()> {
        match self.peek()? {
            b'L' => self.expr_primary(),
            b'J' => {
                self.pos += 1;
                while !self.eat(b'E') {
                    self.template_arg()?;
                }
                Some(())
            }
            b'X' => None,
            _ => self.ty(),
        }
    }

    fn expr_primary(&mut self) -> Option<()> {
        self.expect(b'L')?;
        if self.peek()? == b'_' {
            return None;
        }
        self.ty()?;
        while self.peek()? != b'E' {
            self.pos += 1;
        }
        self.expect(b'E')
    }

    fn ty(&mut self) -> Option<()> {
        let c = self.peek()?;
        match c {
            b'v' | b'w' | b'b' | b'c' | b'a' | b'h' | b's' | b't' | b'i' | b'j' | b'l' | b'm' | b'x' | b'y'
            | b'n' | b'o' | b'f' | b'd' | b'e' | b'g' | b'z' => {
                self.pos += 1;
                Some(())
            }
            b'u' => {
                self.pos += 1;
                self.source_name().map(|_| ())
            }
            b'D' => {
                self.pos += 1;
                match self.peek()? {
                    b'd' | b'e' | b'f' | b'h' | b'i' | b's' | b'u' | b'a' | b'c' | b'n' => {
                        self.pos += 1;
                        Some(())
                    }
                    b'F' => {
                        self.pos += 1;
                        self.number()?;
                        self.eat(b'x');
                        self.expect(b'_')
                    }
                    b'p' => {
                        self.pos += 1;
                        self.ty()?;
                        self.subs.push(String::new());
                        Some(())
                    }
                    _ => None,
                }
            }
            b'r' | b'V' | b'K' | b'P' | b'R' | b'O' | b'C' | b'G' => {
                self.pos += 1;
                self.ty()?;
                self.subs.push(String::new());
                Some(())
            }
            b'F' => {
                self.pos += 1;
                self.eat(b'Y');
                while !matches!(self.peek()?, b'E') {
                    if matches!(self.peek()?, b'R' | b'O') && self.peek_at(1) == Some(b'E') {
                        self.pos += 1;
                        continue;
                    }
                    self.ty()?;
                }
                self.pos += 1;
                self.subs.push(String::new());
                Some(())
            }
            b'A' => {
                self.pos += 1;
                if self.peek()? != b'_' {
                    self.number()?;
                }
                self.expect(b'_')?;
                self.ty()?;
                self.subs.push(String::new());
                Some(())
            }
            b'M' => {
                self.pos += 1;
                self.ty()?;
                self.ty()?;
                self.subs.push(String::new());
                Some(())
            }
            b'T' => {
                self.template_param()?;
                self.subs.push(String::new());
                if self.peek() == Some(b'I') {
                    self.template_args()?;
                    self.subs.push(String::new());
                }
                Some(())
            }
            b'S' => {
                let is_std = self.peek_at(1) == Some(b't');
                let ident = if is_std {
                    self.pos += 2;
                    let ident = self.unqualified_ident(None)?;
                    self.subs.push(ident.clone());
                    ident
                } else {
                    self.substitution()?
                };
                if self.peek() == Some(b'I') {
                    self.template_args()?;
                    self.subs.push(ident);
                }
                Some(())
            }
            b'N' => {
                let ident = self.nested_name()?;
                self.subs.push(ident);
                Some(())
            }
            b'Z' => {
                let ident = self.local_name()?;
                self.subs.push(ident);
                Some(())
            }
            b'0'..=b'9' => {
                let ident = self.source_name()?;
                self.subs.push(ident.clone());
                if self.peek() == Some(b'I') {
                    self.template_args()?;
                    self.subs.push(ident);
                }
                Some(())
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(sym: &str) -> Option<String> {
        demangle(sym).base_identifier().map(str::to_string)
    }

    #[test]
    fn plain_and_mangled() {
        assert_eq!(demangle("attack_kill_all"), DemangleResult::Plain("attack_kill_all".into()));
        assert_eq!(demangle("_ZN6Widget4drawEv"), DemangleResult::Demangled("draw".into()));
        assert_eq!(demangle("_Z9free_optsv"), DemangleResult::Demangled("free_opts".into()));
    }

    #[test]
    fn foreign_language() {
        assert_eq!(demangle("main.init·1"), DemangleResult::ForeignLanguage);
        assert_eq!(demangle("go.buildid"), DemangleResult::ForeignLanguage);
        assert_eq!(demangle("base_GHCziBase_zdfMonadIO_closure_ghc"), DemangleResult::ForeignLanguage);
        assert_eq!(demangle("ghczmprim_GHCziTypes_Izh_con_info"), DemangleResult::ForeignLanguage);
    }

    #[test]
    fn unparseable() {
        assert_eq!(demangle(""), DemangleResult::Unparseable);
        assert_eq!(demangle("_ZTV6Widget"), DemangleResult::Unparseable);
        assert_eq!(demangle("_ZGVZ4mainE1x"), DemangleResult::Unparseable);
        assert_eq!(demangle("_Z"), DemangleResult::Unparseable);
        assert_eq!(demangle("_ZN6Widget"), DemangleResult::Unparseable);
        assert_eq!(demangle("foo bar"), DemangleResult::Unparseable);
        assert_eq!(demangle("_Z99short"), DemangleResult::Unparseable);
    }

    #[test]
    fn suffixes_stripped() {
        assert_eq!(base("memcpy@plt").as_deref(), Some("memcpy"));
        assert_eq!(base("read_file.isra.0").as_deref(), Some("read_file"));
        assert_eq!(base("read_file.part.3.cold").as_deref(), Some("read_file"));
        assert_eq!(base("_Z3foov.cold").as_deref(), Some("foo"));
    }

    #[test]
    fn ctor_dtor_take_class_name() {
        assert_eq!(base("_ZN6WidgetC2Ev").as_deref(), Some("Widget"));
        assert_eq!(base("_ZN6WidgetD0Ev").as_deref(), Some("Widget"));
        assert_eq!(base("_ZNSt6vectorIiSaIiEEC2Ev").as_deref(), Some("vector"));
    }

    #[test]
    fn substitution_out_of_range() {
        assert_eq!(demangle("_ZNS3_3fooEv"), DemangleResult::Unparseable);
    }
}
