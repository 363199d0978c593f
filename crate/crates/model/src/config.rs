use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Transformer,
    Seq2Seq,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Transformer => "transformer",
            Arch::Seq2Seq => "seq2seq",
        })
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transformer" => Ok(Arch::Transformer),
            "seq2seq" => Ok(Arch::Seq2Seq),
            other => Err(ModelError::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Shape of an encoder-decoder model.
///
/// The Transformer uses `embed_dim` as its model width (and requires
/// `hidden_dim == embed_dim`), `ff_dim` for the feed-forward blocks and
/// `layers` for both stacks. The Seq2Seq model has a `layers`-deep
/// bidirectional LSTM encoder with `hidden_dim / 2` units per direction and
/// a single-layer LSTM decoder of width `hidden_dim`; it ignores `heads`
/// and `ff_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub dropout: f64,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn transformer(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            arch: Arch::Transformer,
            embed_dim: 64,
            hidden_dim: 64,
            ff_dim: 256,
            layers: 2,
            heads: 4,
            max_src_len: 500,
            max_tgt_len: 10,
            src_vocab_size,
            tgt_vocab_size,
            dropout: 0.1,
            tie_embeddings: false,
        }
    }

    pub fn seq2seq(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            arch: Arch::Seq2Seq,
            embed_dim: 64,
            hidden_dim: 64,
            ff_dim: 1,
            layers: 2,
            heads: 1,
            ..Self::transformer(src_vocab_size, tgt_vocab_size)
        }
    }

    /// Width of the decoder output fed to the vocabulary projection.
    pub(crate) fn output_width(&self) -> usize {
        match (self.arch, self.tie_embeddings) {
            (Arch::Transformer, _) => self.embed_dim,
            (Arch::Seq2Seq, true) => self.embed_dim,
            (Arch::Seq2Seq, false) => self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("ff_dim", self.ff_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be at least 1"));
        }
        if self.src_vocab_size < 2 || self.tgt_vocab_size <= nomen_core::reserved::UNK as usize {
            return err("vocabularies must cover the reserved symbols".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.arch {
            Arch::Transformer => {
                if !self.embed_dim.is_multiple_of(self.heads) {
                    return err(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
                }
                if self.hidden_dim != self.embed_dim {
                    return err("transformer requires hidden_dim == embed_dim".into());
                }
            }
            Arch::Seq2Seq => {
                if !self.hidden_dim.is_multiple_of(2) {
                    return err("seq2seq hidden_dim must be even (split across directions)".into());
                }
            }
        }
        Ok(())
    }

    /// Canonical `key=value` form, keys sorted.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        [
            ("arch", self.arch.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("max_src_len", self.max_src_len.to_string()),
            ("max_tgt_len", self.max_tgt_len.to_string()),
            ("src_vocab_size", self.src_vocab_size.to_string()),
            ("tgt_vocab_size", self.tgt_vocab_size.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("tie_embeddings", self.tie_embeddings.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T, ModelError> {
            kv.get(key)
                .ok_or_else(|| ModelError::Config(format!("missing `{key}`")))?
                .parse()
                .map_err(|_| ModelError::Config(format!("bad value for `{key}`")))
        }
        let cfg = Self {
            arch: get(kv, "arch")?,
            embed_dim: get(kv, "embed_dim")?,
            hidden_dim: get(kv, "hidden_dim")?,
            ff_dim: get(kv, "ff_dim")?,
            layers: get(kv, "layers")?,
            heads: get(kv, "heads")?,
            max_src_len: get(kv, "max_src_len")?,
            max_tgt_len: get(kv, "max_tgt_len")?,
            src_vocab_size: get(kv, "src_vocab_size")?,
            tgt_vocab_size: get(kv, "tgt_vocab_size")?,
            dropout: get(kv, "dropout")?,
            tie_embeddings: get(kv, "tie_embeddings")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Learning-rate multiplier as a function of the 1-based optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Linear warmup to the base rate, then decay with `1/sqrt(step)`.
    InverseSqrtWarmup { warmup_steps: u64 },
    /// Multiply by `factor` every `every` steps.
    StepDecay { factor: f64, every: u64 },
}

impl LrSchedule {
    pub fn multiplier(&self, step: u64) -> f64 {
        let step = step.max(1);
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::InverseSqrtWarmup { warmup_steps } => {
                let w = warmup_steps.max(1) as f64;
                let s = step as f64;
                (s / w).min((w / s).sqrt())
            }
            LrSchedule::StepDecay { factor, every } => factor.powi(((step - 1) / every.max(1)) as i32),
        }
    }

    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Transformer => LrSchedule::InverseSqrtWarmup { warmup_steps: 200 },
            Arch::Seq2Seq => LrSchedule::StepDecay { factor: 0.5, every: 1000 },
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => write!(f, "constant"),
            LrSchedule::InverseSqrtWarmup { warmup_steps } => write!(f, "inverse_sqrt:{warmup_steps}"),
            LrSchedule::StepDecay { factor, every } => write!(f, "step:{factor:?}:{every}"),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = ModelError;

    /// Parses `constant`, `inverse_sqrt:<warmup>` or `step:<factor>:<every>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Config(format!("bad lr schedule `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["constant"] => Ok(LrSchedule::Constant),
            ["inverse_sqrt", w] => Ok(LrSchedule::InverseSqrtWarmup { warmup_steps: w.parse().map_err(|_| bad())? }),
            ["step", f, e] => Ok(LrSchedule::StepDecay {
                factor: f.parse().map_err(|_| bad())?,
                every: e.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub label_smoothing: f64,
}

impl TrainConfig {
    pub fn for_arch(arch: Arch) -> Self {
        Self {
            max_epochs: 30,
            batch_size: 512,
            patience: 2,
            seed: 0,
            adam: AdamConfig::default(),
            schedule: LrSchedule::for_arch(arch),
            clip_norm: Some(1.0),
            label_smoothing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patience == 0 {
            return Err(ModelError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ModelError::Config("label_smoothing outside [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        [
            ("max_epochs", self.max_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("lr", format!("{:?}", self.adam.lr)),
            ("beta1", format!("{:?}", self.adam.beta1)),
            ("beta2", format!("{:?}", self.adam.beta2)),
            ("eps", format!("{:?}", self.adam.eps)),
            ("schedule", self.schedule.to_string()),
            ("clip_norm", self.clip_norm.map_or("none".into(), |c| format!("{c:?}"))),
            ("label_smoothing", format!("{:?}", self.label_smoothing)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
