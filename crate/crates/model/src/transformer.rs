//! Pre-norm Transformer encoder-decoder over row-stacked batches.

use ndarray::Array2;

use crate::config::ModelConfig;
use crate::model::Dropout;
use crate::params::{Init, ParamBuilder};
use crate::tape::{Segment, Tape, Var};

struct Ln {
    gain: usize,
    bias: usize,
}

struct Mha {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

struct EncLayer {
    ln1: Ln,
    attn: Mha,
    ln2: Ln,
    ffn: Ffn,
}

struct DecLayer {
    ln1: Ln,
    self_attn: Mha,
    ln2: Ln,
    cross: Mha,
    ln3: Ln,
    ffn: Ffn,
}

pub(crate) struct Transformer {
    d: usize,
    heads: usize,
    src_emb: usize,
    tgt_emb: usize,
    enc: Vec<EncLayer>,
    enc_ln: Ln,
    dec: Vec<DecLayer>,
    dec_ln: Ln,
    /// `None` when the output projection is tied to the target embedding.
    out_w: Option<usize>,
    out_b: usize,
}

fn ln(b: &mut ParamBuilder, prefix: &str, d: usize) -> Ln {
    Ln { gain: b.add(format!("{prefix}.gain"), 1, d, Init::Ones), bias: b.add(format!("{prefix}.bias"), 1, d, Init::Zeros) }
}

fn mha(b: &mut ParamBuilder, prefix: &str, d: usize) -> Mha {
    let mut lin = |n: &str| {
        (
            b.add(format!("{prefix}.{n}.weight"), d, d, Init::Xavier),
            b.add(format!("{prefix}.{n}.bias"), 1, d, Init::Zeros),
        )
    };
    let (wq, bq) = lin("q");
    let (wk, bk) = lin("k");
    let (wv, bv) = lin("v");
    let (wo, bo) = lin("o");
    Mha { wq, bq, wk, bk, wv, bv, wo, bo }
}

fn ffn(b: &mut ParamBuilder, prefix: &str, d: usize, f: usize) -> Ffn {
    Ffn {
        w1: b.add(format!("{prefix}.ff1.weight"), d, f, Init::Xavier),
        b1: b.add(format!("{prefix}.ff1.bias"), 1, f, Init::Zeros),
        w2: b.add(format!("{prefix}.ff2.weight"), f, d, Init::Xavier),
        b2: b.add(format!("{prefix}.ff2.bias"), 1, d, Init::Zeros),
    }
}

/// Sinusoidal position table with `rows` positions.
pub(crate) fn positional_table(rows: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, d), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn linear(t: &mut Tape, x: Var, w: usize, b: usize) -> Var {
    let w = t.param(w);
    let b = t.param(b);
    let y = t.matmul(x, w);
    t.add_row(y, b)
}

impl Transformer {
    pub fn declare(cfg: &ModelConfig, b: &mut ParamBuilder) -> Self {
        let d = cfg.embed_dim;
        let emb_std = 1.0 / (d as f64).sqrt();
        let src_emb = b.add("src_embedding", cfg.src_vocab_size, d, Init::Normal(emb_std));
        let tgt_emb = b.add("tgt_embedding", cfg.tgt_vocab_size, d, Init::Normal(emb_std));
        let enc = (0..cfg.layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncLayer {
                    ln1: ln(b, &format!("{p}.ln1"), d),
                    attn: mha(b, &format!("{p}.self_attn"), d),
                    ln2: ln(b, &format!("{p}.ln2"), d),
                    ffn: ffn(b, &p, d, cfg.ff_dim),
                }
            })
            .collect();
        let enc_ln = ln(b, "encoder.ln", d);
        let dec = (0..cfg.layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecLayer {
                    ln1: ln(b, &format!("{p}.ln1"), d),
                    self_attn: mha(b, &format!("{p}.self_attn"), d),
                    ln2: ln(b, &format!("{p}.ln2"), d),
                    cross: mha(b, &format!("{p}.cross_attn"), d),
                    ln3: ln(b, &format!("{p}.ln3"), d),
                    ffn: ffn(b, &p, d, cfg.ff_dim),
                }
            })
            .collect();
        let dec_ln = ln(b, "decoder.ln", d);
        let out_w = (!cfg.tie_embeddings).then(|| b.add("output.weight", d, cfg.tgt_vocab_size, Init::Xavier));
        let out_b = b.add("output.bias", 1, cfg.tgt_vocab_size, Init::Zeros);
        Transformer { d, heads: cfg.heads, src_emb, tgt_emb, enc, enc_ln, dec, dec_ln, out_w, out_b }
    }

    /// Closed-form parameter count; matches `declare` for every config.
    pub fn parameter_count(cfg: &ModelConfig) -> usize {
        let (d, f, l) = (cfg.embed_dim, cfg.ff_dim, cfg.layers);
        let (vs, vt) = (cfg.src_vocab_size, cfg.tgt_vocab_size);
        let attn = 4 * (d * d + d);
        let ff = 2 * d * f + f + d;
        let enc_layer = 2 * (2 * d) + attn + ff;
        let dec_layer = 3 * (2 * d) + 2 * attn + ff;
        let out = if cfg.tie_embeddings { vt } else { d * vt + vt };
        (vs + vt) * d + l * (enc_layer + dec_layer) + 2 * (2 * d) + out
    }

    fn norm(&self, t: &mut Tape, x: Var, p: &Ln) -> Var {
        let n = t.layer_norm(x);
        let g = t.param(p.gain);
        let b = t.param(p.bias);
        let y = t.mul_row(n, g);
        t.add_row(y, b)
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(&self, t: &mut Tape, q_in: Var, kv_in: Var, p: &Mha, q_segs: &[Segment], k_segs: &[Segment], causal: bool) -> Var {
        let q = linear(t, q_in, p.wq, p.bq);
        let k = linear(t, kv_in, p.wk, p.bk);
        let v = linear(t, kv_in, p.wv, p.bv);
        let o = t.attention(q, k, v, q_segs, k_segs, self.heads, causal);
        linear(t, o, p.wo, p.bo)
    }

    fn feed_forward(&self, t: &mut Tape, x: Var, p: &Ffn, drop: &mut Dropout) -> Var {
        let h = linear(t, x, p.w1, p.b1);
        let h = t.relu(h);
        let h = drop.apply(t, h);
        linear(t, h, p.w2, p.b2)
    }

    fn embed(&self, t: &mut Tape, table: usize, seqs: &[&[u32]], pe: &Array2<f64>) -> (Var, Vec<Segment>) {
        let ids: Vec<u32> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let segs = Segment::stack(seqs.iter().map(|s| s.len()));
        let mut pos = Array2::zeros((ids.len(), self.d));
        for seg in &segs {
            pos.slice_mut(ndarray::s![seg.start..seg.start + seg.len, ..])
                .assign(&pe.slice(ndarray::s![..seg.len, ..]));
        }
        let x = t.gather(table, &ids);
        let x = t.scale(x, (self.d as f64).sqrt());
        let pos = t.constant(pos);
        (t.add(x, pos), segs)
    }

    /// Encodes stacked sources; returns the memory and its segments.
    pub fn encode(&self, t: &mut Tape, srcs: &[&[u32]], pe: &Array2<f64>, drop: &mut Dropout) -> (Var, Vec<Segment>) {
        let (x, segs) = self.embed(t, self.src_emb, srcs, pe);
        let mut x = drop.apply(t, x);
        for layer in &self.enc {
            let h = self.norm(t, x, &layer.ln1);
            let a = self.attend(t, h, h, &layer.attn, &segs, &segs, false);
            let a = drop.apply(t, a);
            x = t.add(x, a);
            let h = self.norm(t, x, &layer.ln2);
            let f = self.feed_forward(t, h, &layer.ffn, drop);
            let f = drop.apply(t, f);
            x = t.add(x, f);
        }
        (self.norm(t, x, &self.enc_ln), segs)
    }

    /// Logits for every decoder input position, stacked in input order.
    /// `mem_segs[i]` is the memory segment of `tgt_ins[i]`.
    pub fn decode(
        &self,
        t: &mut Tape,
        memory: Var,
        mem_segs: &[Segment],
        tgt_ins: &[&[u32]],
        pe: &Array2<f64>,
        drop: &mut Dropout,
    ) -> Var {
        let (y, segs) = self.embed(t, self.tgt_emb, tgt_ins, pe);
        let mut y = drop.apply(t, y);
        for layer in &self.dec {
            let h = self.norm(t, y, &layer.ln1);
            let a = self.attend(t, h, h, &layer.self_attn, &segs, &segs, true);
            let a = drop.apply(t, a);
            y = t.add(y, a);
            let h = self.norm(t, y, &layer.ln2);
            let c = self.attend(t, h, memory, &layer.cross, &segs, mem_segs, false);
            let c = drop.apply(t, c);
            y = t.add(y, c);
            let h = self.norm(t, y, &layer.ln3);
            let f = self.feed_forward(t, h, &layer.ffn, drop);
            let f = drop.apply(t, f);
            y = t.add(y, f);
        }
        let y = self.norm(t, y, &self.dec_ln);
        let logits = match self.out_w {
            Some(w) => {
                let w = t.param(w);
                t.matmul(y, w)
            }
            None => {
                let e = t.param(self.tgt_emb);
                t.matmul_t(y, e)
            }
        };
        let b = t.param(self.out_b);
        t.add_row(logits, b)
    }
}
