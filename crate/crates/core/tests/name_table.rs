//! Demangling and splitting table; cases live in `fixtures/demangle_table.tsv`.

use nomen_core::naming::{demangle, split_identifier, DemangleOutcome};

const TABLE: &str = include_str!("fixtures/demangle_table.tsv");

fn outcome(name: &str) -> DemangleOutcome {
    match name {
        "Plain" => DemangleOutcome::Plain,
        "Demangled" => DemangleOutcome::Demangled,
        "ForeignLanguage" => DemangleOutcome::ForeignLanguage,
        "Unparseable" => DemangleOutcome::Unparseable,
        other => panic!("unknown outcome {other}"),
    }
}

#[test]
fn demangle_split_table() {
    let mut failures = Vec::new();
    let mut cases = 0;
    for line in TABLE.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let (raw, want) = (cols[0], cols[1]);
        cases += 1;
        let got = demangle(raw);
        if let Some(o) = want.strip_prefix('!') {
            if got.outcome() != outcome(o) {
                failures.push(format!("{raw}: got {got:?}, want {o}"));
            }
            continue;
        }
        let tokens: Vec<String> = cols[2].split(' ').map(str::to_string).collect();
        if got.base_identifier() != Some(want) || got.base_identifier().map(split_identifier) != Some(tokens) {
            failures.push(format!("{raw}: got {got:?}"));
        }
    }
    assert_eq!(cases, 30);
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
