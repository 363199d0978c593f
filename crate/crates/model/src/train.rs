use std::collections::BTreeMap;

use nomen_core::eval::prf1;
use nomen_core::rng::{derive_seed, XorShiftRng};
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::config::{ModelConfig, TrainConfig};
use crate::data::{EncodedSet, Vocabularies};
use crate::model::{Dropout, Example, Model};
use crate::optim::{clip_global_norm, Adam};
use crate::tape::{Grads, Tape};
use crate::ModelError;

/// Gradient work is split into fixed-size groups whose results are summed
/// in group order, so the outcome does not depend on the thread count.
const GROUP: usize = 16;

/// Scores a model after each epoch; higher is better.
pub trait Validator {
    fn score(&mut self, model: &Model) -> Result<f64, ModelError>;
}

impl<F: FnMut(&Model) -> Result<f64, ModelError>> Validator for F {
    fn score(&mut self, model: &Model) -> Result<f64, ModelError> {
        self(model)
    }
}

/// Macro F1 of greedy decodes against reference token ids.
pub struct DecodeF1<'a> {
    pub set: &'a EncodedSet,
    /// Score only the first `limit` examples.
    pub limit: Option<usize>,
    pub max_len: usize,
}

impl<'a> DecodeF1<'a> {
    pub fn new(set: &'a EncodedSet, max_len: usize) -> Self {
        DecodeF1 { set, limit: None, max_len }
    }
}

impl Validator for DecodeF1<'_> {
    fn score(&mut self, model: &Model) -> Result<f64, ModelError> {
        let n = self.limit.unwrap_or(usize::MAX).min(self.set.len());
        decode_f1(model, &self.set.examples[..n], self.max_len)
    }
}

/// Macro F1 of greedy decoding over `examples` (token ids compared as sets).
pub fn decode_f1(model: &Model, examples: &[Example], max_len: usize) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let srcs: Vec<&[u32]> = examples.iter().map(|e| e.src.as_slice()).collect();
    let decoded: Vec<Vec<u32>> = srcs
        .par_chunks(GROUP)
        .map(|chunk| model.greedy_decode_batch(chunk, max_len))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut total = 0.0;
    for (e, pred) in examples.iter().zip(&decoded) {
        let r: Vec<String> = e.tgt.iter().map(u32::to_string).collect();
        let p: Vec<String> = pred.iter().map(u32::to_string).collect();
        total += prf1(&r, &p).map_err(|err| ModelError::Data(err.to_string()))?.f1;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub lr: f64,
}

impl EpochLog {
    /// `epoch<TAB>train_loss<TAB>val_f1<TAB>lr`; a missing F1 prints `-`.
    pub fn to_line(&self) -> String {
        let f1 = self.val_f1.map_or("-".to_string(), |f| format!("{f:.6}"));
        format!("{}\t{:.6}\t{}\t{:.6e}", self.epoch, self.train_loss, f1, self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn check_digests(vocabs: &Vocabularies, set: &EncodedSet) -> Result<(), ModelError> {
    let expected = vocabs.name_digest();
    if set.name_digest != expected {
        return Err(ModelError::VocabMismatch { which: "name", expected, found: set.name_digest.clone() });
    }
    let expected = vocabs.instr_digest();
    if set.instr_digest != expected {
        return Err(ModelError::VocabMismatch { which: "instruction", expected, found: set.instr_digest.clone() });
    }
    Ok(())
}

fn check_sizes(cfg: &ModelConfig, vocabs: &Vocabularies) -> Result<(), ModelError> {
    if cfg.src_vocab_size != vocabs.instr.len() || cfg.tgt_vocab_size != vocabs.name.len() {
        return Err(ModelError::Config(format!(
            "vocabulary sizes {}/{} differ from config {}/{}",
            vocabs.instr.len(),
            vocabs.name.len(),
            cfg.src_vocab_size,
            cfg.tgt_vocab_size
        )));
    }
    Ok(())
}

/// Loss and gradients of one minibatch. The loss is the mean token NLL
/// over the whole batch.
pub(crate) fn batch_gradients(
    model: &Model,
    batch: &[&Example],
    smoothing: f64,
    dropout_seed: Option<u64>,
) -> (f64, Grads) {
    let tokens: usize = batch.iter().map(|e| e.tgt.len() + 1).sum();
    let scale = 1.0 / tokens as f64;
    let parts: Vec<(f64, Grads)> = batch
        .par_chunks(GROUP)
        .enumerate()
        .map(|(g, group)| {
            let mut drop = match dropout_seed {
                Some(seed) if model.config.dropout > 0.0 => {
                    Dropout::new(model.config.dropout, derive_seed(seed, &format!("group/{g}")))
                }
                _ => Dropout::none(),
            };
            let mut t = Tape::new(&model.params.values);
            let loss = model.batch_loss(&mut t, group, scale, smoothing, &mut drop);
            let mut grads = Grads::new(model.params.len());
            t.backward(loss, &mut grads);
            (t.value(loss)[[0, 0]], grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Grads::new(model.params.len());
    for (loss, g) in parts {
        total += loss;
        grads.merge(g);
    }
    (total, grads)
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    set: &'a EncodedSet,
    opt: Adam,
    step: u64,
}

impl Loop<'_> {
    /// One pass over the data; returns the mean batch loss and last lr.
    fn epoch(&mut self, model: &mut Model, epoch: usize) -> Result<(f64, f64), ModelError> {
        let mut order: Vec<usize> = (0..self.set.len()).collect();
        XorShiftRng::new(derive_seed(self.cfg.seed, &format!("shuffle/{epoch}"))).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut lr = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            self.step += 1;
            let batch: Vec<&Example> = chunk.iter().map(|&i| &self.set.examples[i]).collect();
            let dropout_seed = derive_seed(self.cfg.seed, &format!("dropout/{}", self.step));
            let (loss, mut grads) = batch_gradients(model, &batch, self.cfg.label_smoothing, Some(dropout_seed));
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch, step: self.step });
            }
            if let Some(max) = self.cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            lr = self.cfg.adam.lr * self.cfg.schedule.multiplier(self.step);
            self.opt.step(&mut model.params, &grads, lr);
            loss_sum += loss;
            batches += 1;
        }
        Ok((loss_sum / batches.max(1) as f64, lr))
    }
}

fn snapshot(model: &Model, vocabs: &Vocabularies, meta: TrainingMeta) -> Checkpoint {
    let mut params = model.params.clone();
    params.round_to_f32();
    Checkpoint { config: model.config.clone(), params, vocabs: vocabs.clone(), meta }
}

/// Shared epoch loop. With a validator, keeps the best-scoring snapshot and
/// stops after `patience` epochs without improvement; without one, runs
/// all epochs and keeps the last parameters.
fn run(
    mut model: Model,
    cfg: &TrainConfig,
    vocabs: &Vocabularies,
    set: &EncodedSet,
    mut validator: Option<&mut dyn Validator>,
    mut meta: TrainingMeta,
) -> Result<TrainOutcome, ModelError> {
    let mut lp = Loop { cfg, set, opt: Adam::new(&model.params, cfg.adam), step: 0 };
    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut stale = 0;
    let start_epochs = meta.epochs_run;
    if validator.is_none() || cfg.max_epochs == 0 {
        best = Some((f64::NAN, snapshot(&model, vocabs, meta.clone())));
    }
    for epoch in 1..=cfg.max_epochs {
        let (train_loss, lr) = if set.is_empty() { (0.0, 0.0) } else { lp.epoch(&mut model, epoch)? };
        let val_f1 = validator.as_deref_mut().map(|v| v.score(&model)).transpose()?;
        let entry = EpochLog { epoch, train_loss, val_f1, lr };
        log::info!("{}", entry.to_line());
        log.push(entry);
        meta.epochs_run = start_epochs + epoch;
        match val_f1 {
            None => {
                meta.best_epoch = meta.epochs_run;
                best = Some((f64::NAN, snapshot(&model, vocabs, meta.clone())));
            }
            Some(f1) => {
                if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                    meta.best_epoch = meta.epochs_run;
                    meta.best_val_f1 = Some(f1);
                    best = Some((f1, snapshot(&model, vocabs, meta.clone())));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        log::info!("early stop after epoch {epoch}: no improvement for {stale} epochs");
                        break;
                    }
                }
            }
        }
    }
    let (_, mut checkpoint) = best.expect("at least one snapshot");
    checkpoint.meta.epochs_run = meta.epochs_run;
    Ok(TrainOutcome { checkpoint, log })
}

/// Trains a fresh model with early stopping on `validator`.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocabs: &Vocabularies,
    train_set: &EncodedSet,
    validator: &mut dyn Validator,
) -> Result<TrainOutcome, ModelError> {
    train_cfg.validate()?;
    check_sizes(model_cfg, vocabs)?;
    check_digests(vocabs, train_set)?;
    let model = Model::new(model_cfg.clone(), derive_seed(train_cfg.seed, "init"))?;
    let meta = TrainingMeta {
        seed: train_cfg.seed,
        epochs_run: 0,
        best_epoch: 0,
        best_val_f1: None,
        train_config: prefixed(train_cfg),
    };
    run(model, train_cfg, vocabs, train_set, Some(validator), meta)
}

/// Continues training from `checkpoint` for `train_cfg.max_epochs` epochs.
/// Without a validator every epoch runs and the final parameters are
/// returned; with one, early stopping applies as in [`train`].
pub fn fine_tune(
    checkpoint: &Checkpoint,
    train_cfg: &TrainConfig,
    domain_set: &EncodedSet,
    validator: Option<&mut dyn Validator>,
) -> Result<TrainOutcome, ModelError> {
    train_cfg.validate()?;
    check_digests(&checkpoint.vocabs, domain_set)?;
    let model = checkpoint.model()?;
    let mut meta = checkpoint.meta.clone();
    meta.best_val_f1 = None;
    meta.train_config.extend(prefixed_with(train_cfg, "finetune."));
    run(model, train_cfg, &checkpoint.vocabs, domain_set, validator, meta)
}

fn prefixed(cfg: &TrainConfig) -> BTreeMap<String, String> {
    prefixed_with(cfg, "train.")
}

fn prefixed_with(cfg: &TrainConfig, prefix: &str) -> BTreeMap<String, String> {
    cfg.to_kv().into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect()
}
