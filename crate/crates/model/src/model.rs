use ndarray::Array2;
use nomen_core::reserved::{BOS, EOS, PAD, UNK};
use nomen_core::rng::XorShiftRng;

use crate::config::{Arch, ModelConfig};
use crate::params::{ParamBuilder, Params};
use crate::seq2seq::Seq2Seq;
use crate::tape::{Segment, Tape, Var};
use crate::transformer::{positional_table, Transformer};
use crate::ModelError;

/// One training pair: instruction ids and name-token ids (no BOS/EOS).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl Example {
    pub fn decoder_input(&self) -> Vec<u32> {
        std::iter::once(BOS).chain(self.tgt.iter().copied()).collect()
    }

    pub fn decoder_target(&self) -> Vec<u32> {
        self.tgt.iter().copied().chain(std::iter::once(EOS)).collect()
    }
}

/// Inverted dropout; a no-op without a generator or with `p == 0`.
pub(crate) struct Dropout {
    p: f64,
    rng: Option<XorShiftRng>,
}

impl Dropout {
    pub fn none() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn new(p: f64, seed: u64) -> Self {
        Dropout { p, rng: Some(XorShiftRng::new(seed)) }
    }

    pub fn apply(&mut self, t: &mut Tape, v: Var) -> Var {
        let Some(rng) = self.rng.as_mut().filter(|_| self.p > 0.0) else {
            return v;
        };
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        let mask = Array2::from_shape_simple_fn(t.value(v).raw_dim(), || if rng.next_f64() < p { 0.0 } else { keep });
        t.mul_const(v, mask)
    }
}

enum Net {
    Transformer(Transformer),
    Seq2Seq(Seq2Seq),
}

pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    net: Net,
    pe: Array2<f64>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("config", &self.config).field("scalars", &self.params.scalar_count()).finish()
    }
}

fn layout(config: &ModelConfig) -> Result<(Net, ParamBuilder), ModelError> {
    config.validate()?;
    let mut b = ParamBuilder::default();
    let net = match config.arch {
        Arch::Transformer => Net::Transformer(Transformer::declare(config, &mut b)),
        Arch::Seq2Seq => Net::Seq2Seq(Seq2Seq::declare(config, &mut b)),
    };
    Ok((net, b))
}

/// Closed-form parameter count for a configuration.
///
/// Transformer, with width d, feed-forward f, L layers and vocabularies
/// Vs, Vt: `(Vs+Vt)d + L[(4d²+2df+9d+f) + (8d²+2df+15d+f)] + 4d + dVt + Vt`
/// (the `dVt` term drops when embeddings are tied).
///
/// Seq2Seq, with embedding e, hidden H = 2h, output width O (H, or e when
/// tied) and `cell(i, u) = 4u(i + u + 1)`:
/// `(Vs+Vt)e + 2·cell(e,h) + 2(L-1)·cell(H,h) + (H²+H) + (2H²+2H)
///  + cell(e+H,H) + (2HO+O) + OVt + Vt`.
pub fn parameter_count(config: &ModelConfig) -> usize {
    match config.arch {
        Arch::Transformer => Transformer::parameter_count(config),
        Arch::Seq2Seq => Seq2Seq::parameter_count(config),
    }
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let (net, builder) = layout(&config)?;
        let params = builder.initialize(&mut XorShiftRng::new(seed));
        Ok(Self::assemble(config, params, net))
    }

    /// Wraps existing parameters, checking names and shapes against the
    /// layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self, ModelError> {
        let (net, builder) = layout(&config)?;
        builder.check(&params)?;
        Ok(Self::assemble(config, params, net))
    }

    fn assemble(config: ModelConfig, params: Params, net: Net) -> Self {
        let pe = match config.arch {
            Arch::Transformer => positional_table(config.max_src_len.max(config.max_tgt_len + 1), config.embed_dim),
            Arch::Seq2Seq => Array2::zeros((0, 0)),
        };
        Model { config, params, net, pe }
    }

    pub(crate) fn check_example(&self, src: &[u32], tgt_in: &[u32]) -> Result<(), ModelError> {
        let c = &self.config;
        if src.is_empty() || src.len() > c.max_src_len {
            return Err(ModelError::Input(format!("source length {} outside 1..={}", src.len(), c.max_src_len)));
        }
        if tgt_in.is_empty() || tgt_in.len() > c.max_tgt_len + 1 {
            return Err(ModelError::Input(format!(
                "target prefix length {} outside 1..={}",
                tgt_in.len(),
                c.max_tgt_len + 1
            )));
        }
        if let Some(&id) = src.iter().find(|&&id| id as usize >= c.src_vocab_size) {
            return Err(ModelError::Input(format!("source id {id} out of range")));
        }
        if let Some(&id) = tgt_in.iter().find(|&&id| id as usize >= c.tgt_vocab_size) {
            return Err(ModelError::Input(format!("target id {id} out of range")));
        }
        Ok(())
    }

    /// Stacked logits for a batch of (source, decoder input) pairs.
    pub(crate) fn batch_logits(&self, t: &mut Tape, srcs: &[&[u32]], tgt_ins: &[&[u32]], drop: &mut Dropout) -> Var {
        match &self.net {
            Net::Transformer(tr) => {
                let (mem, segs) = tr.encode(t, srcs, &self.pe, drop);
                tr.decode(t, mem, &segs, tgt_ins, &self.pe, drop)
            }
            Net::Seq2Seq(s2s) => {
                let rows: Vec<Var> =
                    srcs.iter().zip(tgt_ins).map(|(src, tgt)| s2s.forward_one(t, src, tgt, drop)).collect();
                t.concat_rows(&rows)
            }
        }
    }

    /// Teacher-forced summed NLL of `examples`, multiplied by `scale`.
    pub(crate) fn batch_loss(
        &self,
        t: &mut Tape,
        examples: &[&Example],
        scale: f64,
        smoothing: f64,
        drop: &mut Dropout,
    ) -> Var {
        let ins: Vec<Vec<u32>> = examples.iter().map(|e| e.decoder_input()).collect();
        let targets: Vec<u32> = examples.iter().flat_map(|e| e.decoder_target()).collect();
        let srcs: Vec<&[u32]> = examples.iter().map(|e| e.src.as_slice()).collect();
        let in_refs: Vec<&[u32]> = ins.iter().map(Vec::as_slice).collect();
        let logits = self.batch_logits(t, &srcs, &in_refs, drop);
        t.cross_entropy(logits, &targets, PAD, scale, smoothing)
    }

    /// Logits `[tgt_len × tgt_vocab_size]`; row `i` scores the token after
    /// `tgt_prefix[..=i]`.
    pub fn forward(&self, src: &[u32], tgt_prefix: &[u32]) -> Result<Array2<f64>, ModelError> {
        self.check_example(src, tgt_prefix)?;
        let mut t = Tape::new(&self.params.values);
        let logits = self.batch_logits(&mut t, &[src], &[tgt_prefix], &mut Dropout::none());
        Ok(t.value(logits).clone())
    }

    /// Mean token NLL of `examples` without dropout.
    pub fn mean_loss(&self, examples: &[Example]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for e in examples {
            let logits = self.forward(&e.src, &e.decoder_input())?;
            let target = e.decoder_target();
            let n = target.iter().filter(|&&x| x != PAD).count();
            total += loss(&logits, &target)? * n as f64;
            tokens += n;
        }
        Ok(total / tokens.max(1) as f64)
    }

    /// Greedy decoding of one source.
    pub fn greedy_decode(&self, src: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
        Ok(self.greedy_decode_batch(&[src], max_len)?.pop().expect("one output per source"))
    }

    /// Greedy decoding of several sources; output excludes BOS/EOS/PAD and
    /// never contains UNK. Ties go to the smallest id. `max_len` is capped
    /// at `max_tgt_len`.
    pub fn greedy_decode_batch(&self, srcs: &[&[u32]], max_len: usize) -> Result<Vec<Vec<u32>>, ModelError> {
        let max_len = max_len.min(self.config.max_tgt_len);
        for src in srcs {
            self.check_example(src, &[BOS])?;
        }
        let mut out = Vec::with_capacity(srcs.len());
        for chunk in srcs.chunks(64) {
            out.extend(match &self.net {
                Net::Transformer(tr) => self.decode_transformer(tr, chunk, max_len),
                Net::Seq2Seq(s2s) => chunk.iter().map(|src| self.decode_seq2seq(s2s, src, max_len)).collect(),
            });
        }
        Ok(out)
    }

    fn decode_transformer(&self, tr: &Transformer, srcs: &[&[u32]], max_len: usize) -> Vec<Vec<u32>> {
        let mut t = Tape::new(&self.params.values);
        let mut drop = Dropout::none();
        let (mem, segs) = tr.encode(&mut t, srcs, &self.pe, &mut drop);
        let mut prefixes: Vec<Vec<u32>> = vec![vec![BOS]; srcs.len()];
        let mut done = vec![max_len == 0; srcs.len()];
        loop {
            let active: Vec<usize> = (0..srcs.len()).filter(|&i| !done[i]).collect();
            if active.is_empty() {
                break;
            }
            let ins: Vec<&[u32]> = active.iter().map(|&i| prefixes[i].as_slice()).collect();
            let mem_segs: Vec<Segment> = active.iter().map(|&i| segs[i]).collect();
            let logits = tr.decode(&mut t, mem, &mem_segs, &ins, &self.pe, &mut drop);
            let values = t.value(logits);
            let mut row = 0;
            let mut picks = Vec::with_capacity(active.len());
            for &i in &active {
                row += prefixes[i].len();
                picks.push((i, argmax_token(values.row(row - 1).as_slice().expect("contiguous row"))));
            }
            for (i, tok) in picks {
                if tok == EOS {
                    done[i] = true;
                } else {
                    prefixes[i].push(tok);
                    done[i] = prefixes[i].len() > max_len;
                }
            }
        }
        prefixes.into_iter().map(|p| p[1..].to_vec()).collect()
    }

    fn decode_seq2seq(&self, s2s: &Seq2Seq, src: &[u32], max_len: usize) -> Vec<u32> {
        let mut t = Tape::new(&self.params.values);
        let mut drop = Dropout::none();
        let (enc, mut state) = s2s.encode(&mut t, src, &mut drop);
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let y = s2s.embed_target(&mut t, &[prev], &mut drop);
            let (logits, next) = s2s.step(&mut t, &enc, state, y);
            state = next;
            let tok = argmax_token(t.value(logits).row(0).as_slice().expect("contiguous row"));
            if tok == EOS {
                break;
            }
            out.push(tok);
            prev = tok;
        }
        out
    }
}

/// Argmax over ids that may be emitted (EOS and ordinary tokens); the
/// first maximum wins.
fn argmax_token(row: &[f64]) -> u32 {
    let mut best = EOS as usize;
    for (id, &v) in row.iter().enumerate() {
        if id as u32 == PAD || id as u32 == BOS || id as u32 == UNK {
            continue;
        }
        if v > row[best] {
            best = id;
        }
    }
    best as u32
}

/// Mean token-level negative log-likelihood of `targets` under row-wise
/// softmax of `logits`, ignoring PAD positions.
pub fn loss(logits: &Array2<f64>, targets: &[u32]) -> Result<f64, ModelError> {
    if logits.nrows() != targets.len() {
        return Err(ModelError::Shape(format!("{} logit rows for {} targets", logits.nrows(), targets.len())));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        if t == PAD {
            continue;
        }
        if t as usize >= row.len() {
            return Err(ModelError::Input(format!("target id {t} out of range")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t as usize];
        n += 1;
    }
    if n == 0 {
        return Err(ModelError::EmptyTarget);
    }
    Ok(total / n as f64)
}

/// Row-wise softmax (used for inspection and tests).
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        crate::tape::softmax_in_place(row.as_slice_mut().expect("contiguous row"));
    }
    p
}
