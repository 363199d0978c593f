use nomen_core::reserved::UNK;
use nomen_core::rng::{derive_seed, XorShiftRng};

use crate::config::ModelConfig;
use crate::model::{Dropout, Example, Model};
use crate::tape::Tape;
use crate::train::batch_gradients;
use crate::ModelError;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, for near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;
const MAX_DIM: usize = 8;
const MAX_SEQ: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter element with the largest error, as `name[row,col]`.
    pub worst: String,
    pub checked: usize,
    /// Elements skipped because a ReLU changed sides within ±step.
    pub skipped: usize,
}

fn loss_and_signature(model: &Model, batch: &[&Example]) -> (f64, u64) {
    let tokens: usize = batch.iter().map(|e| e.tgt.len() + 1).sum();
    let mut t = Tape::new(&model.params.values);
    let loss = model.batch_loss(&mut t, batch, 1.0 / tokens as f64, 0.0, &mut Dropout::none());
    (t.value(loss)[[0, 0]], t.relu_signature())
}

/// Compares analytic gradients of the mean token NLL with central finite
/// differences for every parameter of a freshly initialized tiny model.
///
/// Relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn gradient_check(cfg: &ModelConfig, seed: u64) -> Result<GradCheckReport, ModelError> {
    cfg.validate()?;
    if [cfg.embed_dim, cfg.hidden_dim, cfg.ff_dim].iter().any(|&d| d > MAX_DIM) || cfg.max_src_len > MAX_SEQ {
        return Err(ModelError::Config(format!(
            "gradient check needs dims <= {MAX_DIM} and sequences <= {MAX_SEQ}"
        )));
    }
    let cfg = ModelConfig { dropout: 0.0, ..cfg.clone() };
    let mut model = Model::new(cfg.clone(), derive_seed(seed, "gradcheck/init"))?;
    let mut rng = XorShiftRng::new(derive_seed(seed, "gradcheck/data"));
    let max_tgt = cfg.max_tgt_len.min(MAX_SEQ - 1);
    let examples: Vec<Example> = (0..2)
        .map(|_| {
            let src_len = 1 + rng.below(cfg.max_src_len);
            let tgt_len = 1 + rng.below(max_tgt);
            let first = UNK as usize;
            Example {
                src: (0..src_len).map(|_| rng.below(cfg.src_vocab_size) as u32).collect(),
                tgt: (0..tgt_len).map(|_| (first + rng.below(cfg.tgt_vocab_size - first)) as u32).collect(),
            }
        })
        .collect();
    let batch: Vec<&Example> = examples.iter().collect();
    let (_, grads) = batch_gradients(&model, &batch, 0.0, None);
    let (_, base_sig) = loss_and_signature(&model, &batch);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, skipped: 0 };
    for i in 0..model.params.len() {
        let (rows, cols) = model.params.values[i].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.params.values[i][[r, c]];
                model.params.values[i][[r, c]] = orig + FD_STEP;
                let (up, sig_up) = loss_and_signature(&model, &batch);
                model.params.values[i][[r, c]] = orig - FD_STEP;
                let (down, sig_down) = loss_and_signature(&model, &batch);
                model.params.values[i][[r, c]] = orig;
                if sig_up != base_sig || sig_down != base_sig {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * FD_STEP);
                let analytic = grads.0[i].as_ref().map_or(0.0, |g| g[[r, c]]);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
                report.checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = format!("{}[{r},{c}]", model.params.names[i]);
                }
            }
        }
    }
    Ok(report)
}

/// A small configuration accepted by [`gradient_check`].
pub fn tiny_config(arch: crate::config::Arch) -> ModelConfig {
    let base = match arch {
        crate::config::Arch::Transformer => ModelConfig::transformer(7, 9),
        crate::config::Arch::Seq2Seq => ModelConfig::seq2seq(7, 9),
    };
    ModelConfig {
        embed_dim: 8,
        hidden_dim: 8,
        ff_dim: if arch == crate::config::Arch::Transformer { 8 } else { 1 },
        layers: 2,
        heads: if arch == crate::config::Arch::Transformer { 2 } else { 1 },
        max_src_len: 5,
        max_tgt_len: 4,
        dropout: 0.0,
        ..base
    }
}
