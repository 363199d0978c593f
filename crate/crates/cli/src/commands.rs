use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::ArgMatches;
use nomen_core::asmnorm::{InstrVocabulary, Normalizer};
use nomen_core::corpus::{self, parse_corpus, ParseOptions, RawFunction};
use nomen_core::dataset::{corpus_stats, load_dataset, save_dataset, Dataset, Split};
use nomen_core::eval::{evaluate_corpus, random_baseline, read_prediction_records, write_predictions, Prediction};
use nomen_core::naming::{
    build_vocabulary, normalize_name, raw_name_tokens, read_stoplist, Demangler, NameTokens, TokenVocabulary,
};
use nomen_core::pipeline::{build_dataset, PipelineOptions};
use nomen_core::rng::derive_seed;
use nomen_core::synth::{self, SynthConfig};
use nomen_model::gradcheck::tiny_config;
use nomen_model::{
    fine_tune, gradient_check, train, Arch, Checkpoint, DecodeF1, EncodedSet, LrSchedule, Model,
    ModelConfig, ModelError, TrainConfig, Validator, Vocabularies,
};
use rayon::prelude::*;

use crate::settings::Settings;

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}
use crate::Failure;

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("tau", "500"),
    ("imm-threshold", "5000"),
    ("min-len", "5"),
    ("max-len", "500"),
    ("ratios", "0.8,0.1,0.1"),
    ("max-name-tokens", "10"),
    ("min-freq", "2"),
    ("arch", "transformer"),
    ("epochs", "30"),
    ("patience", "2"),
    ("batch-size", "512"),
    ("validate-on", "validation"),
    ("kind", "toy"),
    ("seeds", "10"),
    ("tolerance", "1e-4"),
];

/// Overrides of [`DEFAULTS`] for single subcommands.
fn command_defaults(command: &str) -> Vec<(&'static str, &'static str)> {
    let mut d: Vec<(&str, &str)> = DEFAULTS.to_vec();
    let own: &[(&str, &str)] = match command {
        "finetune" => &[("epochs", "5")],
        "predict" | "eval" => &[("split", "test")],
        "stats" => &[("split", "train")],
        "gradcheck" => &[("arch", "all")],
        _ => &[],
    };
    for &(k, v) in own {
        d.retain(|(dk, _)| *dk != k);
        d.push((k, v));
    }
    d
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::Config(msg) => Failure::Usage(msg),
        other => Failure::Data(other.into()),
    }
}

pub fn run(def: &clap::Command, sub: &ArgMatches) -> Result<(), Failure> {
    let command = def.get_name();
    let s = Settings::resolve(def, sub, &command_defaults(command))?;
    if let Some(workers) = s.get::<usize>("workers")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set up {workers} workers: {e}")))?;
    }
    match command {
        "synth" => synth_cmd(s),
        "ingest" => ingest(s),
        "build-vocab" => build_vocab(s),
        "normalize" => normalize(s),
        "split" => split(s),
        "train" => train_cmd(s),
        "finetune" => finetune(s),
        "predict" => predict(s),
        "eval" => eval(s),
        "stats" => stats(s),
        "gradcheck" => gradcheck(s),
        other => Err(Failure::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Formats that cannot carry metadata get a `<file>.meta.json` next to them.
fn write_sidecar(path: &Path, s: &Settings, extra: serde_json::Value) -> anyhow::Result<()> {
    let mut meta = s.meta_json();
    if let (Some(obj), serde_json::Value::Object(extra)) = (meta.as_object_mut(), extra) {
        obj.extend(extra);
    }
    let mut w = create(&sidecar(path))?;
    writeln!(w, "{meta:#}")?;
    w.flush()?;
    Ok(())
}

fn read_listing(path: &Path, lenient: bool) -> Result<Vec<RawFunction>, Failure> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let listing = parse_corpus(BufReader::new(file), ParseOptions { strict: !lenient })
        .with_context(|| format!("parsing {}", path.display()))?;
    if !listing.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed record(s)", path.display(), listing.skipped.len());
    }
    Ok(listing.functions)
}

fn read_stoplist_opt(s: &mut Settings) -> Result<std::collections::BTreeSet<String>, Failure> {
    match s.path("stoplist") {
        Some(p) => {
            s.record_input("stoplist", &p)?;
            let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
            Ok(read_stoplist(BufReader::new(f))?)
        }
        None => Ok(Default::default()),
    }
}

/// `--vocab` names either a name-vocabulary TSV or a dataset directory.
fn read_vocab_arg(s: &mut Settings) -> Result<(Option<TokenVocabulary>, Option<InstrVocabulary>), Failure> {
    let Some(p) = s.path("vocab") else { return Ok((None, None)) };
    s.record_input("vocab", &p)?;
    if p.is_dir() {
        let d = load_dataset(&p).with_context(|| format!("loading dataset {}", p.display()))?;
        Ok((Some(d.name_vocab), Some(d.instr_vocab)))
    } else {
        let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
        let v = TokenVocabulary::read_tsv(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?;
        Ok((Some(v), None))
    }
}

fn parse_ratios(text: &str) -> Result<[f64; 3], Failure> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("bad ratios `{text}`")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| Failure::Usage(format!("ratios need three values, got `{text}`")))
}

fn load_dataset_arg(s: &mut Settings, key: &str) -> Result<Dataset, Failure> {
    let dir = s.required_path(key)?;
    s.record_input(key, &dir)?;
    Ok(load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?)
}

fn load_checkpoint_arg(s: &mut Settings) -> Result<Checkpoint, Failure> {
    let path = s.required_path("checkpoint")?;
    s.record_input("checkpoint", &path)?;
    Ok(Checkpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?)
}

fn synth_cmd(s: Settings) -> Result<(), Failure> {
    let out = s.required_path("out")?;
    let seed: u64 = s.value("seed")?;
    let cfg = match s.raw("kind").unwrap_or("toy") {
        "toy" => SynthConfig { seed, ..SynthConfig::toy() },
        "general" => SynthConfig::general(seed),
        "domain" => SynthConfig::domain(seed),
        other => return Err(Failure::Usage(format!("unknown corpus kind `{other}`"))),
    };
    let fns = synth::generate(&cfg);
    let mut w = create(&out)?;
    synth::write_listing(&mut w, &fns)?;
    w.flush()?;
    say!("wrote {} functions to {}", fns.len(), out.display());
    Ok(())
}

fn ingest(mut s: Settings) -> Result<(), Failure> {
    let input = s.required_path("corpus")?;
    let out = s.required_path("out")?;
    s.record_input("corpus", &input)?;
    let fns = read_listing(&input, s.flag("lenient")?)?;
    let parsed = fns.len();
    let (min_len, max_len): (usize, usize) = (s.value("min-len")?, s.value("max-len")?);
    let normalizer = Normalizer::try_new(s.value("imm-threshold")?, Default::default()).map_err(anyhow::Error::from)?;
    let fns = corpus::filter_by_length(fns, min_len, max_len);
    let kept_len = fns.len();
    let fns = corpus::deduplicate_with(fns, &normalizer);
    let mut w = create(&out)?;
    for f in &fns {
        serde_json::to_writer(&mut w, &corpus::to_listing_value(f))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let counts = serde_json::json!({"parsed": parsed, "after_length_filter": kept_len, "after_dedup": fns.len()});
    write_sidecar(&out, &s, serde_json::json!({ "counts": counts }))?;
    say!("{counts}");
    Ok(())
}

fn build_vocab(mut s: Settings) -> Result<(), Failure> {
    let input = s.required_path("corpus")?;
    let out = s.required_path("out")?;
    s.record_input("corpus", &input)?;
    let stoplist = read_stoplist_opt(&mut s)?;
    let fns = read_listing(&input, s.flag("lenient")?)?;
    let demangler = Demangler::default();
    let named: Vec<(&str, Vec<String>)> = fns
        .iter()
        .filter_map(|f| raw_name_tokens(&demangler, &f.mangled_name).ok().map(|t| (f.package_id.as_str(), t)))
        .collect();
    let vocab = build_vocabulary(named.iter().map(|(p, t)| (*p, t.iter())), s.value("tau")?, &stoplist)
        .map_err(anyhow::Error::from)?;
    let mut w = create(&out)?;
    vocab.write_tsv(&mut w)?;
    w.flush()?;
    write_sidecar(&out, &s, serde_json::json!({"words": vocab.len(), "named_functions": named.len()}))?;
    say!("{} words from {} named functions", vocab.len(), named.len());
    Ok(())
}

fn normalize(mut s: Settings) -> Result<(), Failure> {
    let input = s.required_path("corpus")?;
    let out = s.required_path("out")?;
    s.record_input("corpus", &input)?;
    let (vocab, _) = read_vocab_arg(&mut s)?;
    let fns = read_listing(&input, s.flag("lenient")?)?;
    let normalizer = Normalizer::try_new(s.value("imm-threshold")?, Default::default()).map_err(anyhow::Error::from)?;
    let mut w = create(&out)?;
    for f in &fns {
        let instructions: Vec<String> =
            normalizer.normalize_function(f).into_iter().map(|i| i.into_string()).collect();
        let mut rec = serde_json::json!({"id": f.function_id, "instructions": instructions});
        if let Some(v) = &vocab {
            let name = normalize_name(&f.mangled_name, v).ok().map(NameTokens::into_inner);
            rec["name_tokens"] = serde_json::json!(name);
        }
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_sidecar(&out, &s, serde_json::json!({"functions": fns.len()}))?;
    Ok(())
}

fn split(mut s: Settings) -> Result<(), Failure> {
    let input = s.required_path("corpus")?;
    let out = s.required_path("out")?;
    s.record_input("corpus", &input)?;
    let stoplist = read_stoplist_opt(&mut s)?;
    let (name_vocab, instr_vocab) = read_vocab_arg(&mut s)?;
    let fns = read_listing(&input, s.flag("lenient")?)?;
    let mut config = s.run_config();
    config.insert("run_config_digest".into(), s.digest());
    let opts = PipelineOptions {
        imm_threshold: s.value("imm-threshold")?,
        min_len: s.value("min-len")?,
        max_len: s.value("max-len")?,
        tau: s.value("tau")?,
        stoplist,
        max_name_tokens: s.value("max-name-tokens")?,
        min_instr_freq: s.value("min-freq")?,
        ratios: parse_ratios(s.raw("ratios").unwrap_or_default())?,
        seed: derive_seed(s.value("seed")?, "split"),
        config,
        ..Default::default()
    };
    let (dataset, report) = build_dataset(fns, &opts, name_vocab, instr_vocab).map_err(|e| match e {
        nomen_core::pipeline::PipelineError::Options(msg) => Failure::Usage(msg),
        other => Failure::Data(other.into()),
    })?;
    save_dataset(&out, &dataset).with_context(|| format!("writing dataset {}", out.display()))?;
    let sizes: BTreeMap<&str, usize> =
        Split::ALL.iter().map(|&sp| (sp.as_str(), dataset.split(sp).len())).collect();
    say!("{}", serde_json::json!({"pipeline": report, "splits": sizes, "name_vocab": dataset.name_vocab.len(), "instr_vocab": dataset.instr_vocab.len()}));
    Ok(())
}

fn model_config(s: &Settings, vocabs: &Vocabularies) -> Result<ModelConfig, Failure> {
    let arch: Arch = s.value::<String>("arch")?.parse().map_err(model_failure)?;
    let (vs, vt) = (vocabs.instr.len(), vocabs.name.len());
    let base = match arch {
        Arch::Transformer => ModelConfig::transformer(vs, vt),
        Arch::Seq2Seq => ModelConfig::seq2seq(vs, vt),
    };
    let cfg = ModelConfig {
        embed_dim: s.get("embed-dim")?.unwrap_or(base.embed_dim),
        hidden_dim: s.get("hidden-dim")?.or(s.get("embed-dim")?).unwrap_or(base.hidden_dim),
        ff_dim: s.get("ff-dim")?.unwrap_or(base.ff_dim),
        layers: s.get("layers")?.unwrap_or(base.layers),
        heads: s.get("heads")?.unwrap_or(base.heads),
        max_src_len: s.get("max-src-len")?.unwrap_or(base.max_src_len),
        max_tgt_len: s.get("max-tgt-len")?.unwrap_or(base.max_tgt_len),
        dropout: s.get("dropout")?.unwrap_or(base.dropout),
        tie_embeddings: s.flag("tie-embeddings")?,
        ..base
    };
    cfg.validate().map_err(model_failure)?;
    Ok(cfg)
}

fn train_config(s: &Settings, arch: Arch) -> Result<TrainConfig, Failure> {
    let mut t = TrainConfig::for_arch(arch);
    t.max_epochs = s.value("epochs")?;
    t.patience = s.value("patience")?;
    t.batch_size = s.value("batch-size")?;
    t.seed = derive_seed(s.value("seed")?, "train");
    if let Some(lr) = s.get("lr")? {
        t.adam.lr = lr;
    }
    if let Some(sched) = s.raw("schedule") {
        t.schedule = sched.parse::<LrSchedule>().map_err(model_failure)?;
    }
    if let Some(clip) = s.get::<f64>("clip-norm")? {
        t.clip_norm = (clip > 0.0).then_some(clip);
    }
    if let Some(ls) = s.get("label-smoothing")? {
        t.label_smoothing = ls;
    }
    t.validate().map_err(model_failure)?;
    Ok(t)
}

fn write_training_log(out: &Path, s: &Settings, log: &[nomen_model::EpochLog]) -> anyhow::Result<()> {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".log.tsv");
    let mut w = create(&out.with_file_name(name))?;
    writeln!(w, "# run_config_digest={}", s.digest())?;
    writeln!(w, "epoch\ttrain_loss\tval_f1\tlr")?;
    for e in log {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()?;
    Ok(())
}

fn non_empty(set: EncodedSet, what: &str) -> Result<EncodedSet, Failure> {
    if set.is_empty() {
        return Err(Failure::Data(anyhow!("{what} is empty")));
    }
    Ok(set)
}

fn validator<'a>(s: &Settings, set: &'a EncodedSet, max_len: usize) -> Result<DecodeF1<'a>, Failure> {
    Ok(DecodeF1 { set, limit: s.get("val-limit")?, max_len })
}

/// Logs every epoch score as it is computed.
struct Logged<V>(V);

impl<V: Validator> Validator for Logged<V> {
    fn score(&mut self, model: &Model) -> Result<f64, ModelError> {
        let f1 = self.0.score(model)?;
        log::info!("validation F1 {f1:.4}");
        Ok(f1)
    }
}

fn train_cmd(mut s: Settings) -> Result<(), Failure> {
    let dataset = load_dataset_arg(&mut s, "dataset")?;
    let out = s.required_path("out")?;
    let vocabs = Vocabularies::of(&dataset);
    let mcfg = model_config(&s, &vocabs)?;
    let tcfg = train_config(&s, mcfg.arch)?;
    let val_split: Split = s.value::<String>("validate-on")?.parse().map_err(Failure::Usage)?;
    let train_set =
        non_empty(vocabs.encode_split(&dataset, Split::Train, mcfg.max_src_len, mcfg.max_tgt_len), "training split")?;
    let val_set = non_empty(
        vocabs.encode_split(&dataset, val_split, mcfg.max_src_len, mcfg.max_tgt_len),
        &format!("{} split", val_split.as_str()),
    )?;
    let mut v = Logged(validator(&s, &val_set, mcfg.max_tgt_len)?);
    let outcome = train(&mcfg, &tcfg, &vocabs, &train_set, &mut v).map_err(model_failure)?;
    let mut ckpt = outcome.checkpoint;
    ckpt.meta.train_config.insert("train.run_config_digest".into(), s.digest());
    ckpt.save(&out).with_context(|| format!("writing {}", out.display()))?;
    write_training_log(&out, &s, &outcome.log)?;
    say!(
        "epochs {} best epoch {} validation F1 {:.4}",
        ckpt.meta.epochs_run,
        ckpt.meta.best_epoch,
        ckpt.meta.best_val_f1.unwrap_or(0.0)
    );
    Ok(())
}

fn finetune(mut s: Settings) -> Result<(), Failure> {
    let ckpt = load_checkpoint_arg(&mut s)?;
    let dataset = load_dataset_arg(&mut s, "dataset")?;
    let out = s.required_path("out")?;
    let tcfg = train_config(&s, ckpt.config.arch)?;
    let vocabs = &ckpt.vocabs;
    let (src, tgt) = (ckpt.config.max_src_len, ckpt.config.max_tgt_len);
    let set = vocabs.encode_split(&dataset, Split::Train, src, tgt);
    let d = Vocabularies::of(&dataset);
    if d.name_digest() != vocabs.name_digest() || d.instr_digest() != vocabs.instr_digest() {
        return Err(Failure::Data(anyhow!(
            "dataset vocabularies differ from the checkpoint's; rebuild it with `split --vocab <pretraining dataset>`"
        )));
    }
    let set = non_empty(set, "training split")?;
    let outcome = if s.flag("validate")? {
        let val = non_empty(vocabs.encode_split(&dataset, Split::Validation, src, tgt), "validation split")?;
        let mut v = Logged(validator(&s, &val, tgt)?);
        fine_tune(&ckpt, &tcfg, &set, Some(&mut v))
    } else {
        fine_tune(&ckpt, &tcfg, &set, None)
    }
    .map_err(model_failure)?;
    let mut out_ckpt = outcome.checkpoint;
    out_ckpt.meta.train_config.insert("finetune.run_config_digest".into(), s.digest());
    out_ckpt.save(&out).with_context(|| format!("writing {}", out.display()))?;
    write_training_log(&out, &s, &outcome.log)?;
    say!("fine-tuned {} epoch(s)", outcome.log.len());
    Ok(())
}

fn predict(mut s: Settings) -> Result<(), Failure> {
    let ckpt = load_checkpoint_arg(&mut s)?;
    let out = s.required_path("out")?;
    let model = ckpt.model().map_err(model_failure)?;
    let max_len: usize = s.get("max-tgt-len")?.unwrap_or(ckpt.config.max_tgt_len);
    let (ids, srcs): (Vec<String>, Vec<Vec<u32>>) = if s.path("dataset").is_some() {
        let dataset = load_dataset_arg(&mut s, "dataset")?;
        let d = Vocabularies::of(&dataset);
        if d.instr_digest() != ckpt.vocabs.instr_digest() {
            return Err(Failure::Data(anyhow!("dataset instruction vocabulary differs from the checkpoint's")));
        }
        let split: Split = s.value::<String>("split")?.parse().map_err(Failure::Usage)?;
        dataset
            .split(split)
            .iter()
            .map(|f| (f.function.function_id.clone(), ckpt.vocabs.encode_source(&f.function, ckpt.config.max_src_len)))
            .unzip()
    } else {
        let input = s.path("corpus").ok_or_else(|| Failure::MissingArg {
            command: s.command().to_string(),
            arg: "dataset` or `--corpus".into(),
        })?;
        s.record_input("corpus", &input)?;
        read_listing(&input, s.flag("lenient")?)?
            .iter()
            .map(|f| (f.function_id.clone(), ckpt.vocabs.encode_source(f, ckpt.config.max_src_len)))
            .unzip()
    };
    let src_refs: Vec<&[u32]> = srcs.iter().map(Vec::as_slice).collect();
    let decoded: Vec<Vec<u32>> = src_refs
        .par_chunks(16)
        .map(|chunk| model.greedy_decode_batch(chunk, max_len))
        .collect::<Result<Vec<_>, _>>()
        .map_err(model_failure)?
        .into_iter()
        .flatten()
        .collect();
    let preds: Vec<Prediction> =
        ids.into_iter().zip(decoded).map(|(id, toks)| Prediction::new(id, ckpt.vocabs.tokens(&toks))).collect();
    let mut w = create(&out)?;
    write_predictions(&mut w, &preds)?;
    w.flush()?;
    write_sidecar(&out, &s, serde_json::json!({"predictions": preds.len()}))?;
    say!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn read_groups(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, group) =
            line.split_once('\t').ok_or_else(|| anyhow!("{}:{}: expected id<TAB>group", path.display(), i + 1))?;
        out.insert(id.to_string(), group.to_string());
    }
    Ok(out)
}

fn eval(mut s: Settings) -> Result<(), Failure> {
    let dataset = load_dataset_arg(&mut s, "ref")?;
    let split: Split = s.value::<String>("split")?.parse().map_err(Failure::Usage)?;
    let references: BTreeMap<String, NameTokens> =
        dataset.split(split).iter().map(|f| (f.function.function_id.clone(), f.name.clone())).collect();
    let predictions = if s.flag("random-baseline")? {
        let train_names: Vec<&NameTokens> = dataset.split(Split::Train).iter().map(|f| &f.name).collect();
        let stats = corpus_stats(train_names).context("training split statistics")?;
        random_baseline(&stats, &references, derive_seed(s.value("seed")?, "random_baseline"))
    } else {
        let path = s.path("pred").ok_or_else(|| Failure::MissingArg {
            command: s.command().to_string(),
            arg: "pred` or `--random-baseline".into(),
        })?;
        s.record_input("pred", &path)?;
        let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        read_prediction_records(BufReader::new(f))
            .with_context(|| format!("reading {}", path.display()))?
            .into_iter()
            .map(|r| {
                let tokens = match (r.tokens, r.name) {
                    (Some(t), _) => t,
                    // external predictors emit raw names
                    (None, Some(name)) => normalize_name(&name, &dataset.name_vocab).map(NameTokens::into_inner).unwrap_or_default(),
                    (None, None) => Vec::new(),
                };
                Prediction { function_id: r.id, tokens, scores: r.scores }
            })
            .collect()
    };
    let missing = references.len().saturating_sub(predictions.len());
    if missing > 0 {
        log::warn!("{missing} reference function(s) have no prediction and are not scored");
    }
    let groups = match s.path("groups") {
        Some(p) => {
            s.record_input("groups", &p)?;
            Some(read_groups(&p)?)
        }
        None => None,
    };
    let report = evaluate_corpus(&predictions, &references, groups.as_ref()).context("evaluating predictions")?;
    let mut stdout = std::io::stdout().lock();
    report.write_summary_tsv(&mut stdout)?;
    if let Some(out) = s.path("out") {
        let mut doc = s.meta_json();
        doc["report"] = serde_json::to_value(&report)?;
        let mut w = create(&out)?;
        writeln!(w, "{doc:#}")?;
        w.flush()?;
    }
    Ok(())
}

/// Least-squares slope of `(x, y)` points.
fn slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn stats(mut s: Settings) -> Result<(), Failure> {
    let dataset = load_dataset_arg(&mut s, "dataset")?;
    let split: Split = s.value::<String>("split")?.parse().map_err(Failure::Usage)?;
    let names: Vec<&NameTokens> = dataset.split(split).iter().map(|f| &f.name).collect();
    let st = corpus_stats(names).with_context(|| format!("{} split", split.as_str()))?;
    let summary = serde_json::json!({
        "functions": st.functions,
        "distinct_tokens": st.token_frequencies.len(),
        "mean_name_tokens": st.mean_name_tokens,
        "fraction_at_most_3_tokens": st.fraction_at_most(3),
        "name_length_histogram": st.name_length_histogram,
        "loglog_slope": slope(&st.loglog_points),
    });
    say!("{summary:#}");
    if let Some(out) = s.path("out") {
        let mut w = create(&out)?;
        st.write_rank_tsv(&mut w)?;
        w.flush()?;
        write_sidecar(&out, &s, serde_json::json!({ "summary": summary }))?;
    }
    Ok(())
}

fn gradcheck(s: Settings) -> Result<(), Failure> {
    let archs = match s.raw("arch").unwrap_or("all") {
        "all" => vec![Arch::Transformer, Arch::Seq2Seq],
        a => vec![a.parse().map_err(model_failure)?],
    };
    let first: u64 = s.value("seed")?;
    let seeds: u64 = s.value("seeds")?;
    let tolerance: f64 = s.value("tolerance")?;
    let mut worst = 0.0f64;
    for arch in archs {
        for seed in first..first + seeds {
            let r = gradient_check(&tiny_config(arch), seed).map_err(model_failure)?;
            say!(
                "{arch}\tseed {seed}\tmax_rel_error {:.3e}\tat {}\tchecked {}\tskipped {}",
                r.max_rel_error, r.worst, r.checked, r.skipped
            );
            worst = worst.max(r.max_rel_error);
        }
    }
    if worst > tolerance {
        return Err(Failure::Data(anyhow!("max relative error {worst:.3e} exceeds {tolerance:e}")));
    }
    Ok(())
}
