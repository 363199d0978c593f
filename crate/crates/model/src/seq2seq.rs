//! Bidirectional LSTM encoder, LSTM decoder with additive attention.

use ndarray::Array2;

use crate::config::ModelConfig;
use crate::model::Dropout;
use crate::params::{Init, ParamBuilder};
use crate::tape::{Tape, Var};

struct Lstm {
    w: usize,
    u: usize,
    b: usize,
    units: usize,
}

pub(crate) struct Seq2Seq {
    hidden: usize,
    src_emb: usize,
    tgt_emb: usize,
    /// Forward and backward cell per encoder layer.
    enc: Vec<(Lstm, Lstm)>,
    bridge_w: usize,
    bridge_b: usize,
    attn_keys: usize,
    attn_query: usize,
    attn_bias: usize,
    attn_v: usize,
    dec: Lstm,
    mix_w: usize,
    mix_b: usize,
    /// `None` when the projection is tied to the target embedding.
    proj: Option<usize>,
    out_b: usize,
}

/// Encoder output for one source sequence.
pub(crate) struct Encoded {
    memory: Var,
    keys: Var,
}

/// Decoder recurrent state.
#[derive(Clone, Copy)]
pub(crate) struct State {
    h: Var,
    c: Var,
}

fn lstm(b: &mut ParamBuilder, prefix: &str, input: usize, units: usize) -> Lstm {
    Lstm {
        w: b.add(format!("{prefix}.w"), input, 4 * units, Init::Xavier),
        u: b.add(format!("{prefix}.u"), units, 4 * units, Init::Xavier),
        b: b.add(format!("{prefix}.b"), 1, 4 * units, Init::ForgetBias),
        units,
    }
}

impl Lstm {
    /// One step given the precomputed input contribution `x_proj` (1×4u).
    fn step(&self, t: &mut Tape, x_proj: Var, state: State) -> State {
        let u = self.units;
        let uw = t.param(self.u);
        let rec = t.matmul(state.h, uw);
        let gates = t.add(x_proj, rec);
        let i = t.slice_cols(gates, 0, u);
        let i = t.sigmoid(i);
        let f = t.slice_cols(gates, u, 2 * u);
        let f = t.sigmoid(f);
        let g = t.slice_cols(gates, 2 * u, 3 * u);
        let g = t.tanh(g);
        let o = t.slice_cols(gates, 3 * u, 4 * u);
        let o = t.sigmoid(o);
        let keep = t.mul(f, state.c);
        let write = t.mul(i, g);
        let c = t.add(keep, write);
        let tc = t.tanh(c);
        let h = t.mul(o, tc);
        State { h, c }
    }

    fn project(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }

    /// Runs over all rows of `x`, returning per-row hidden states (in row
    /// order) and the final state.
    fn run(&self, t: &mut Tape, x: Var, reverse: bool) -> (Var, State) {
        let pre = self.project(t, x);
        let n = t.value(x).nrows();
        let zero = t.constant(Array2::zeros((1, self.units)));
        let mut state = State { h: zero, c: zero };
        let mut hs = vec![zero; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for r in order {
            let xr = t.slice_rows(pre, r, r + 1);
            state = self.step(t, xr, state);
            hs[r] = state.h;
        }
        (t.concat_rows(&hs), state)
    }
}

impl Seq2Seq {
    pub fn declare(cfg: &ModelConfig, b: &mut ParamBuilder) -> Self {
        let (e, hd) = (cfg.embed_dim, cfg.hidden_dim);
        let half = hd / 2;
        let emb_std = 1.0 / (e as f64).sqrt();
        let src_emb = b.add("src_embedding", cfg.src_vocab_size, e, Init::Normal(emb_std));
        let tgt_emb = b.add("tgt_embedding", cfg.tgt_vocab_size, e, Init::Normal(emb_std));
        let enc = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { e } else { hd };
                (lstm(b, &format!("encoder.{l}.fwd"), input, half), lstm(b, &format!("encoder.{l}.bwd"), input, half))
            })
            .collect();
        let bridge_w = b.add("bridge.weight", hd, hd, Init::Xavier);
        let bridge_b = b.add("bridge.bias", 1, hd, Init::Zeros);
        let attn_keys = b.add("attention.keys", hd, hd, Init::Xavier);
        let attn_query = b.add("attention.query", hd, hd, Init::Xavier);
        let attn_bias = b.add("attention.bias", 1, hd, Init::Zeros);
        let attn_v = b.add("attention.v", hd, 1, Init::Xavier);
        let dec = lstm(b, "decoder", e + hd, hd);
        let out = cfg.output_width();
        let mix_w = b.add("output.mix.weight", 2 * hd, out, Init::Xavier);
        let mix_b = b.add("output.mix.bias", 1, out, Init::Zeros);
        let proj = (!cfg.tie_embeddings).then(|| b.add("output.weight", out, cfg.tgt_vocab_size, Init::Xavier));
        let out_b = b.add("output.bias", 1, cfg.tgt_vocab_size, Init::Zeros);
        Seq2Seq {
            hidden: hd,
            src_emb,
            tgt_emb,
            enc,
            bridge_w,
            bridge_b,
            attn_keys,
            attn_query,
            attn_bias,
            attn_v,
            dec,
            mix_w,
            mix_b,
            proj,
            out_b,
        }
    }

    /// Closed-form parameter count; matches `declare` for every config.
    pub fn parameter_count(cfg: &ModelConfig) -> usize {
        let (e, hd, l) = (cfg.embed_dim, cfg.hidden_dim, cfg.layers);
        let half = hd / 2;
        let cell = |input: usize, units: usize| input * 4 * units + units * 4 * units + 4 * units;
        let enc: usize = (0..l).map(|i| 2 * cell(if i == 0 { e } else { hd }, half)).sum();
        let out = cfg.output_width();
        let vt = cfg.tgt_vocab_size;
        let proj = if cfg.tie_embeddings { 0 } else { out * vt };
        (cfg.src_vocab_size + vt) * e
            + enc
            + (hd * hd + hd)
            + (2 * hd * hd + hd + hd)
            + cell(e + hd, hd)
            + (2 * hd * out + out)
            + proj
            + vt
    }

    pub fn encode(&self, t: &mut Tape, src: &[u32], drop: &mut Dropout) -> (Encoded, State) {
        let x = t.gather(self.src_emb, src);
        let mut x = drop.apply(t, x);
        let mut last = None;
        for (l, (fwd, bwd)) in self.enc.iter().enumerate() {
            let (hf, sf) = fwd.run(t, x, false);
            let (hb, sb) = bwd.run(t, x, true);
            x = t.concat_cols(&[hf, hb]);
            if l + 1 < self.enc.len() {
                x = drop.apply(t, x);
            }
            last = Some((sf.h, sb.h));
        }
        let (hf, hb) = last.expect("at least one encoder layer");
        let joined = t.concat_cols(&[hf, hb]);
        let bw = t.param(self.bridge_w);
        let bb = t.param(self.bridge_b);
        let s0 = t.matmul(joined, bw);
        let s0 = t.add_row(s0, bb);
        let h = t.tanh(s0);
        let c = t.constant(Array2::zeros((1, self.hidden)));
        let wk = t.param(self.attn_keys);
        let keys = t.matmul(x, wk);
        (Encoded { memory: x, keys }, State { h, c })
    }

    /// Attention weights (1×T) of `state` over the encoder memory.
    pub fn attention_weights(&self, t: &mut Tape, enc: &Encoded, state: State) -> Var {
        let wq = t.param(self.attn_query);
        let bq = t.param(self.attn_bias);
        let q = t.matmul(state.h, wq);
        let q = t.add_row(q, bq);
        let e = t.add_row(enc.keys, q);
        let e = t.tanh(e);
        let v = t.param(self.attn_v);
        let scores = t.matmul(e, v);
        let scores = t.transpose(scores);
        t.softmax_rows(scores)
    }

    /// One decoder step from `state` consuming the embedded previous token.
    pub fn step(&self, t: &mut Tape, enc: &Encoded, state: State, y_prev: Var) -> (Var, State) {
        let a = self.attention_weights(t, enc, state);
        let ctx = t.matmul(a, enc.memory);
        let x = t.concat_cols(&[y_prev, ctx]);
        let x = self.dec.project(t, x);
        let next = self.dec.step(t, x, state);
        let mixed = t.concat_cols(&[next.h, ctx]);
        let mw = t.param(self.mix_w);
        let mb = t.param(self.mix_b);
        let o = t.matmul(mixed, mw);
        let o = t.add_row(o, mb);
        let o = t.tanh(o);
        let logits = match self.proj {
            Some(p) => {
                let p = t.param(p);
                t.matmul(o, p)
            }
            None => {
                let e = t.param(self.tgt_emb);
                t.matmul_t(o, e)
            }
        };
        let ob = t.param(self.out_b);
        (t.add_row(logits, ob), next)
    }

    pub fn embed_target(&self, t: &mut Tape, ids: &[u32], drop: &mut Dropout) -> Var {
        let y = t.gather(self.tgt_emb, ids);
        drop.apply(t, y)
    }

    /// Teacher-forced logits for one example (rows follow `tgt_in`).
    pub fn forward_one(&self, t: &mut Tape, src: &[u32], tgt_in: &[u32], drop: &mut Dropout) -> Var {
        let (enc, mut state) = self.encode(t, src, drop);
        let y = self.embed_target(t, tgt_in, drop);
        let mut rows = Vec::with_capacity(tgt_in.len());
        for i in 0..tgt_in.len() {
            let yi = t.slice_rows(y, i, i + 1);
            let (logits, next) = self.step(t, &enc, state, yi);
            rows.push(logits);
            state = next;
        }
        t.concat_rows(&rows)
    }
}
