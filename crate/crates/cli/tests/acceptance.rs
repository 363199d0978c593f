//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line to
//! stderr (bypassing output capture) and then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nomen_core::asmnorm::normalize_instruction;
use nomen_core::corpus::{deduplicate, parse_corpus, Instruction, ParseOptions, RawFunction};
use nomen_core::dataset::{corpus_stats, split_by_package, Dataset, Split};
use nomen_core::eval::{evaluate_corpus, prf1, random_baseline, Prediction};
use nomen_core::naming::{
    build_vocabulary, demangle, final_convert, split_identifier, stem_token, DemangleOutcome, NameTokens,
};
use nomen_core::pipeline::{build_dataset, PipelineOptions};
use nomen_core::rng::XorShiftRng;
use nomen_core::synth::{generate, SynthConfig};
use nomen_model::gradcheck::tiny_config;
use nomen_model::{
    decode_f1, fine_tune, gradient_check, train, Arch, Checkpoint, DecodeF1, EncodedSet, LrSchedule, Model,
    ModelConfig, ModelError, TrainConfig, Vocabularies,
};

const F1_EXACT_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const SPLIT_TOL: f64 = 0.02;
const OVERFIT_F1: f64 = 0.9;
const OVERFIT_MAX_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const FINETUNE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const FINETUNE_EPOCHS: usize = 5;
/// Paired wins required out of the five seeds, besides the mean ordering.
const MIN_WINS_OVER_PRETRAINED: usize = 4;
const MIN_WINS_OVER_SCRATCH: usize = 3;
const BASELINE_SEEDS: u64 = 20;

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{status}] criterion {id:>2}: {title} | {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn read_listing(path: &Path) -> Vec<RawFunction> {
    let f = std::fs::File::open(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_corpus(BufReader::new(f), ParseOptions::default()).unwrap().functions
}

#[test]
fn c01_normalization_fidelity() {
    let norm = |mn: &str, ops: &[&str]| normalize_instruction(&Instruction::new(mn, ops.iter().copied()), 5000).into_string();
    let cases: [(&str, &[&str], &str); 9] = [
        ("mov", &["EBX", "6000"], "mov_EBX,IMM"),
        ("mov", &["EBX", "[0x3435423]"], "mov_EBX,MEM"),
        ("mov", &["EAX", "[EBP-8]"], "mov_EAX,[EBP-8]"),
        ("mov", &["eax", "5000"], "mov_eax,5000"),
        ("mov", &["eax", "5001"], "mov_eax,IMM"),
        ("mov", &["eax", "-5000"], "mov_eax,-5000"),
        ("mov", &["eax", "-5001"], "mov_eax,IMM"),
        ("mov", &["eax", "0x1388"], "mov_eax,0x1388"),
        ("mov", &["eax", "0x1389"], "mov_eax,IMM"),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter_map(|(mn, ops, want)| {
            let got = norm(mn, ops);
            (got != *want).then(|| format!("{mn} {ops:?} -> {got}, want {want}"))
        })
        .collect();
    report(1, "normalization fidelity", bad.is_empty(), &format!("{} cases, mismatches: {bad:?}", cases.len()));
}

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
fn c02_name_pipeline_fidelity() {
    let mut bad = Vec::new();
    let words: Vec<String> = ["num", "vertex"].iter().map(|s| s.to_string()).collect();
    let vocab = build_vocabulary([("p", words.iter())], 1, &BTreeSet::new()).unwrap();
    for (raw, want) in [("numpy", vec!["num"]), ("numvertex", vec!["num", "vertex"])] {
        let got = final_convert(&[raw.to_string()], &vocab).into_inner();
        if got != want {
            bad.push(format!("{raw} -> {got:?}"));
        }
    }
    for w in ["sharing", "shared"] {
        if stem_token(w) != "share" {
            bad.push(format!("{w} stems to {}", stem_token(w)));
        }
    }
    let table = include_str!("../../core/tests/fixtures/demangle_table.tsv");
    let mut cases = 0;
    for line in table.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        cases += 1;
        let got = demangle(cols[0]);
        let ok = match cols[1].strip_prefix('!') {
            Some(o) => got.outcome() == outcome(o),
            None => {
                let tokens: Vec<String> = cols[2].split(' ').map(str::to_string).collect();
                got.base_identifier() == Some(cols[1]) && got.base_identifier().map(split_identifier) == Some(tokens)
            }
        };
        if !ok {
            bad.push(format!("{}: {got:?}", cols[0]));
        }
    }
    let pass = bad.is_empty() && cases == 30;
    report(2, "name-pipeline fidelity", pass, &format!("{cases}-case table plus 4 examples, mismatches: {bad:?}"));
}

/// Set-intersection P/R/F1 written independently of the library.
fn brute_prf1(reference: &[String], predicted: &[String]) -> (f64, f64, f64) {
    let mut r: Vec<&String> = reference.iter().collect();
    r.sort();
    r.dedup();
    let mut p: Vec<&String> = predicted.iter().collect();
    p.sort();
    p.dedup();
    if p.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let hits = p.iter().filter(|t| r.contains(t)).count() as f64;
    let (prec, rec) = (hits / p.len() as f64, hits / r.len() as f64);
    let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    (prec, rec, f1)
}

#[test]
fn c03_metric_oracle() {
    let t0 = Instant::now();
    let alphabet = ["get", "set", "file", "name", "read", "buf", "init", "free", "list", "node"];
    let mut rng = XorShiftRng::new(3);
    let draw = |rng: &mut XorShiftRng, min: usize| -> Vec<String> {
        (0..min + rng.below(6)).map(|_| alphabet[rng.below(alphabet.len())].to_string()).collect()
    };
    let mut worst = 0.0f64;
    let mut harmonic_ok = true;
    for _ in 0..1000 {
        let r = draw(&mut rng, 1);
        let p = draw(&mut rng, 0);
        let got = prf1(&r, &p).unwrap();
        let (bp, br, bf) = brute_prf1(&r, &p);
        worst = worst.max((got.precision - bp).abs()).max((got.recall - br).abs()).max((got.f1 - bf).abs());
        let sum = got.precision + got.recall;
        if sum > 0.0 && (got.f1 - 2.0 * got.precision * got.recall / sum).abs() > F1_EXACT_TOL {
            harmonic_ok = false;
        }
    }
    let empty = prf1(&["get".to_string()], &Vec::<String>::new()).unwrap();
    let empty_ok = (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0);
    let fast = t0.elapsed() < Duration::from_secs(1);
    let pass = worst <= F1_EXACT_TOL && harmonic_ok && empty_ok && fast;
    report(
        3,
        "metric oracle",
        pass,
        &format!("1000 pairs, max |diff| {worst:.1e}, harmonic {harmonic_ok}, empty {empty_ok}, {:?}", t0.elapsed()),
    );
}

/// An operand and the class it must normalize to at threshold 5000.
fn random_operand(rng: &mut XorShiftRng) -> (String, String) {
    match rng.below(5) {
        0 => {
            let r = ["eax", "ebx", "rdi", "rsi"][rng.below(4)];
            (r.to_string(), r.to_string())
        }
        1 => {
            // immediates straddling the threshold
            let v = 4990 + rng.below(20) as i64;
            let v = if rng.below(2) == 0 { v } else { -v };
            (v.to_string(), if v.abs() > 5000 { "IMM".into() } else { v.to_string() })
        }
        2 => {
            let a = 0x400000 + rng.below(4);
            (format!("[0x{a:x}]"), "MEM".into())
        }
        3 => {
            let d = 8 * (1 + rng.below(3));
            (format!("[rbp-{d}]"), format!("[rbp-{d}]"))
        }
        _ => {
            let v = rng.below(3) as i64;
            (v.to_string(), v.to_string())
        }
    }
}

#[test]
fn c04_dedup_oracle() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..50u64 {
        let mut rng = XorShiftRng::new(seed);
        let n = 1 + rng.below(1000);
        let mut fns = Vec::with_capacity(n);
        let mut classes: Vec<Vec<(String, Vec<String>)>> = Vec::with_capacity(n);
        for i in 0..n {
            let len = 1 + rng.below(3);
            let mut instructions = Vec::new();
            let mut class = Vec::new();
            for _ in 0..len {
                let mn = ["mov", "add", "cmp"][rng.below(3)];
                let (raw, norm): (Vec<String>, Vec<String>) = (0..2).map(|_| random_operand(&mut rng)).unzip();
                instructions.push(Instruction::new(mn, raw));
                class.push((mn.to_string(), norm));
            }
            let package = format!("p{}", rng.below(20));
            fns.push(RawFunction {
                function_id: RawFunction::make_id(&package, "b", None, i),
                package_id: package,
                binary_id: "b".into(),
                address: None,
                mangled_name: format!("f{i}"),
                instructions,
            });
            classes.push(class);
        }
        // O(n^2): keep a function unless an earlier kept one has the same class
        let mut kept_idx: Vec<usize> = Vec::new();
        for i in 0..n {
            if !kept_idx.iter().any(|&k| classes[k] == classes[i]) {
                kept_idx.push(i);
            }
        }
        let want: Vec<&str> = kept_idx.iter().map(|&i| fns[i].function_id.as_str()).collect();
        let got = deduplicate(fns.clone());
        let got: Vec<&str> = got.iter().map(|f| f.function_id.as_str()).collect();
        if got != want {
            failures.push(format!("seed {seed}: kept {} want {}", got.len(), want.len()));
        }
    }
    let pass = failures.is_empty() && t0.elapsed() < Duration::from_secs(30);
    report(4, "dedup oracle", pass, &format!("50 corpora, failures {failures:?}, {:?}", t0.elapsed()));
}

#[test]
fn c05_split_soundness() {
    let t0 = Instant::now();
    let mut worst_dev = 0.0f64;
    let mut leaks = 0;
    for seed in 0..100u64 {
        let mut rng = XorShiftRng::new(1000 + seed);
        let packages = 50 + rng.below(100);
        let mut pkg_of_fn: Vec<String> = Vec::new();
        for p in 0..packages {
            for _ in 0..1 + rng.below(20) {
                pkg_of_fn.push(format!("pkg{p}"));
            }
        }
        let m = split_by_package(pkg_of_fn.iter().map(String::as_str), [0.8, 0.1, 0.1], seed).unwrap();
        let mut seen: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        let mut counts = [0usize; 3];
        for p in &pkg_of_fn {
            let s = m.split_of(p).expect("every package assigned");
            seen.entry(p).or_default().insert(s);
            counts[s.index()] += 1;
        }
        leaks += seen.values().filter(|s| s.len() > 1).count();
        for (i, target) in [0.8, 0.1, 0.1].iter().enumerate() {
            worst_dev = worst_dev.max((counts[i] as f64 / pkg_of_fn.len() as f64 - target).abs());
        }
    }
    let pass = leaks == 0 && worst_dev <= SPLIT_TOL && t0.elapsed() < Duration::from_secs(10);
    report(
        5,
        "split soundness",
        pass,
        &format!("100 corpora, leaked packages {leaks}, max fraction deviation {worst_dev:.4}, {:?}", t0.elapsed()),
    );
}

#[test]
fn c06_gradient_correctness() {
    let t0 = Instant::now();
    let mut worst = (0.0f64, String::new());
    for arch in [Arch::Transformer, Arch::Seq2Seq] {
        for seed in 0..10 {
            let r = gradient_check(&tiny_config(arch), seed).unwrap();
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, format!("{arch} seed {seed} {}", r.worst));
            }
        }
    }
    let pass = worst.0 <= GRAD_TOL && t0.elapsed() < Duration::from_secs(120);
    report(
        6,
        "gradient correctness",
        pass,
        &format!("max relative error {:.2e} ({}), {:?}", worst.0, worst.1, t0.elapsed()),
    );
}

fn quick_train_config(seed: u64, batch: usize, max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        batch_size: batch,
        patience,
        seed,
        schedule: LrSchedule::Constant,
        ..TrainConfig::for_arch(Arch::Transformer)
    }
}

#[test]
fn c07_overfit_oracle() {
    let t0 = Instant::now();
    let fns = read_listing(&data_file("toy100.jsonl"));
    let opts = PipelineOptions { tau: 2, ratios: [1.0, 0.0, 0.0], ..Default::default() };
    let (ds, _) = build_dataset(fns, &opts, None, None).unwrap();
    let vocabs = Vocabularies::of(&ds);
    let set = vocabs.encode_split(&ds, Split::Train, 500, 10);
    let mcfg = ModelConfig::transformer(vocabs.instr.len(), vocabs.name.len());
    let tcfg = quick_train_config(7, 16, OVERFIT_MAX_EPOCHS, 10);
    // early-stop on exact reproduction; record F1 along the way
    let mut f1_trace = Vec::new();
    let mut exact_rate = |m: &Model| -> Result<f64, ModelError> {
        f1_trace.push(decode_f1(m, &set.examples, 10)?);
        let srcs: Vec<&[u32]> = set.examples.iter().map(|e| e.src.as_slice()).collect();
        let decoded = m.greedy_decode_batch(&srcs, 10)?;
        let hits = decoded.iter().zip(&set.examples).filter(|(d, e)| **d == e.tgt).count();
        Ok(hits as f64 / set.len() as f64)
    };
    let out = train(&mcfg, &tcfg, &vocabs, &set, &mut exact_rate).unwrap();
    let elapsed = t0.elapsed();
    let first_hit = f1_trace.iter().position(|&f| f >= OVERFIT_F1).map(|i| i + 1);
    let model = out.checkpoint.model().unwrap();
    let f1 = decode_f1(&model, &set.examples, 10).unwrap();
    let exact = set.examples.iter().filter(|e| model.greedy_decode(&e.src, 10).unwrap() == e.tgt).count();
    let first = &set.examples[0];
    let first_ok = model.greedy_decode(&first.src, 10).unwrap() == first.tgt;
    let pass = set.len() == 100
        && f1 >= OVERFIT_F1
        && first_hit.is_some_and(|e| e <= OVERFIT_MAX_EPOCHS)
        && first_ok
        && elapsed < OVERFIT_BUDGET;
    report(
        7,
        "overfit oracle",
        pass,
        &format!(
            "{} functions, F1 {f1:.3} first reached >= {OVERFIT_F1} at epoch {first_hit:?}, \
             exact decodes {exact}/{}, first example reproduced {first_ok}, {elapsed:?}",
            set.len(),
            set.len()
        ),
    );
}

struct FinetuneRun {
    pretrained: f64,
    finetuned: f64,
    scratch: f64,
}

fn finetune_run(seed: u64) -> FinetuneRun {
    let opts = PipelineOptions { tau: 3, seed, ..Default::default() };
    let (a, _) = build_dataset(generate(&SynthConfig::general(seed)), &opts, None, None).unwrap();
    let b_opts = PipelineOptions { ratios: [0.5, 0.17, 0.33], ..opts.clone() };
    let (b, _) = build_dataset(
        generate(&SynthConfig::domain(seed)),
        &b_opts,
        Some(a.name_vocab.clone()),
        Some(a.instr_vocab.clone()),
    )
    .unwrap();
    let vocabs = Vocabularies::of(&a);
    let enc = |d: &Dataset, s| vocabs.encode_split(d, s, 500, 10);
    let (a_train, a_val) = (enc(&a, Split::Train), enc(&a, Split::Validation));
    let (b_train, b_val, b_test) = (enc(&b, Split::Train), enc(&b, Split::Validation), enc(&b, Split::Test));
    assert!(!b_test.is_empty() && !b_train.is_empty());
    let mcfg = ModelConfig::transformer(vocabs.instr.len(), vocabs.name.len());
    let tcfg = quick_train_config(seed, 32, 60, 5);
    let pre = train(&mcfg, &tcfg, &vocabs, &a_train, &mut DecodeF1::new(&a_val, 10)).unwrap().checkpoint;
    let ft_cfg = TrainConfig { max_epochs: FINETUNE_EPOCHS, ..tcfg.clone() };
    let fine = fine_tune(&pre, &ft_cfg, &b_train, None).unwrap().checkpoint;
    let scratch = train(&mcfg, &tcfg, &vocabs, &b_train, &mut DecodeF1::new(&b_val, 10)).unwrap().checkpoint;
    let score = |c: &Checkpoint, set: &EncodedSet| decode_f1(&c.model().unwrap(), &set.examples, 10).unwrap();
    FinetuneRun { pretrained: score(&pre, &b_test), finetuned: score(&fine, &b_test), scratch: score(&scratch, &b_test) }
}

#[test]
fn c08_finetuning_direction() {
    let t0 = Instant::now();
    let runs: Vec<FinetuneRun> = FINETUNE_SEEDS.iter().map(|&s| finetune_run(s)).collect();
    let n = runs.len() as f64;
    let mean = |f: fn(&FinetuneRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let (pt, ft, sc) = (mean(|r| r.pretrained), mean(|r| r.finetuned), mean(|r| r.scratch));
    let wins_pt = runs.iter().filter(|r| r.finetuned > r.pretrained).count();
    let wins_sc = runs.iter().filter(|r| r.finetuned > r.scratch).count();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}/{:.2}/{:.2}", r.finetuned, r.pretrained, r.scratch))
        .collect();
    let pass = ft > pt
        && ft > sc
        && wins_pt >= MIN_WINS_OVER_PRETRAINED
        && wins_sc >= MIN_WINS_OVER_SCRATCH
        && t0.elapsed() < Duration::from_secs(1800);
    report(
        8,
        "fine-tuning direction of effect",
        pass,
        &format!(
            "mean F1 fine-tuned {ft:.3} > pre-trained {pt:.3}, scratch {sc:.3}; paired wins {wins_pt}/5 and {wins_sc}/5; \
             per seed ft/pt/scratch {per_seed:?}, {:?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c09_baseline_ordering() {
    let t0 = Instant::now();
    let fns = read_listing(&data_file("toy100.jsonl"));
    let opts = PipelineOptions { tau: 2, seed: 9, ..Default::default() };
    let (ds, _) = build_dataset(fns, &opts, None, None).unwrap();
    let vocabs = Vocabularies::of(&ds);
    let train_set = vocabs.encode_split(&ds, Split::Train, 500, 10);
    let val_set = vocabs.encode_split(&ds, Split::Validation, 500, 10);
    let test = ds.split(Split::Test);
    let mcfg = ModelConfig::transformer(vocabs.instr.len(), vocabs.name.len());
    let tcfg = quick_train_config(9, 16, 100, 5);
    let ckpt = train(&mcfg, &tcfg, &vocabs, &train_set, &mut DecodeF1::new(&val_set, 10)).unwrap().checkpoint;
    let model = ckpt.model().unwrap();
    let references: BTreeMap<String, NameTokens> =
        test.iter().map(|f| (f.function.function_id.clone(), f.name.clone())).collect();
    let predictions: Vec<Prediction> = test
        .iter()
        .map(|f| {
            let ids = model.greedy_decode(&vocabs.encode_source(&f.function, 500), 10).unwrap();
            Prediction::new(f.function.function_id.clone(), vocabs.tokens(&ids))
        })
        .collect();
    let model_f1 = evaluate_corpus(&predictions, &references, None).unwrap().aggregate.f1;
    let stats = corpus_stats(ds.split(Split::Train).iter().map(|f| &f.name)).unwrap();
    let baseline: Vec<f64> = (0..BASELINE_SEEDS)
        .map(|seed| evaluate_corpus(&random_baseline(&stats, &references, seed), &references, None).unwrap().aggregate.f1)
        .collect();
    let below = baseline.iter().filter(|&&b| b < model_f1).count();
    let max_b = baseline.iter().cloned().fold(0.0, f64::max);
    let mean_b = baseline.iter().sum::<f64>() / baseline.len() as f64;
    let pass = !references.is_empty() && below == baseline.len() && t0.elapsed() < Duration::from_secs(60);
    report(
        9,
        "baseline ordering",
        pass,
        &format!(
            "{} test functions, model F1 {model_f1:.3}; random F1 mean {mean_b:.3} max {max_b:.3}, below in {below}/{}, {:?}",
            references.len(),
            baseline.len(),
            t0.elapsed()
        ),
    );
}

fn nomen(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_nomen")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "nomen {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn run_pipeline(dir: &Path) {
    let corpus = data_file("toy100.jsonl");
    let corpus = corpus.to_str().unwrap();
    std::fs::write(dir.join("run.conf"), "seed = 11\ntau = 2\nbatch_size = 16\nschedule = constant\n").unwrap();
    nomen(dir, &["split", "--config", "run.conf", "--corpus", corpus, "--out", "ds"]);
    nomen(dir, &["train", "--config", "run.conf", "--dataset", "ds", "--epochs", "3", "--out", "m.ckpt"]);
    nomen(dir, &["finetune", "--config", "run.conf", "--checkpoint", "m.ckpt", "--dataset", "ds", "--epochs", "1", "--out", "ft.ckpt"]);
    nomen(dir, &["predict", "--checkpoint", "ft.ckpt", "--dataset", "ds", "--out", "pred.jsonl"]);
    nomen(dir, &["eval", "--pred", "pred.jsonl", "--ref", "ds", "--out", "report.json"]);
    nomen(dir, &["eval", "--random-baseline", "--ref", "ds", "--out", "random.json"]);
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn c10_reproducibility() {
    let t0 = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path());
    run_pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let required = ["ds/corpus.jsonl", "ds/manifest.json", "ds/meta.json", "m.ckpt", "ft.ckpt", "pred.jsonl", "report.json"];
    let present = required.iter().all(|k| fa.contains_key(*k));
    // the library path must agree with itself as well
    let fns = read_listing(&data_file("toy100.jsonl"));
    let opts = PipelineOptions { tau: 2, seed: 11, ..Default::default() };
    let lib_same = build_dataset(fns.clone(), &opts, None, None).unwrap().0 == build_dataset(fns, &opts, None, None).unwrap().0;
    let pass = differing.is_empty() && fa.len() == fb.len() && present && lib_same;
    report(
        10,
        "reproducibility",
        pass,
        &format!("{} output files compared, differing {differing:?}, library dataset identical {lib_same}, {:?}", fa.len(), t0.elapsed()),
    );
}
