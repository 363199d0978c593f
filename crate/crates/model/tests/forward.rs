//! Forward pass, loss and decoding against hand-written references.

use ndarray::{array, Array2};
use nomen_core::reserved::{BOS, EOS, PAD};
use nomen_model::{loss, parameter_count, softmax_rows, Arch, Model, ModelConfig, ModelError};
use proptest::prelude::*;

fn small(arch: Arch) -> ModelConfig {
    let base = match arch {
        Arch::Transformer => ModelConfig::transformer(11, 13),
        Arch::Seq2Seq => ModelConfig::seq2seq(11, 13),
    };
    ModelConfig {
        embed_dim: 8,
        hidden_dim: 8,
        ff_dim: 12,
        layers: 2,
        heads: 2,
        max_src_len: 16,
        max_tgt_len: 6,
        dropout: 0.0,
        ..base
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let model = Model::new(small(Arch::Transformer), 3).unwrap();
    let logits = model.forward(&[4, 5, 6, 7], &[BOS, 4, 5]).unwrap();
    let p = softmax_rows(&logits);
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
    let extreme = softmax_rows(&array![[1000.0, 0.0, -1000.0]]);
    assert!((extreme[[0, 0]] - 1.0).abs() < 1e-12);
}

#[test]
fn decoder_is_causal() {
    for arch in [Arch::Transformer, Arch::Seq2Seq] {
        let model = Model::new(small(arch), 5).unwrap();
        let src = [4, 9, 6, 5, 10];
        let a = model.forward(&src, &[BOS, 7, 8, 9]).unwrap();
        let b = model.forward(&src, &[BOS, 7, 12, 4]).unwrap();
        for i in 0..2 {
            assert_eq!(a.row(i), b.row(i), "{arch}: row {i} saw a later token");
        }
        assert_ne!(a.row(2), b.row(2));
    }
}

// ---- independent reference for a 1-layer, 1-head Transformer ----

type M = Vec<Vec<f64>>;

fn get(model: &Model, name: &str) -> M {
    let i = model.params.index_of(name).unwrap_or_else(|| panic!("no parameter {name}"));
    model.params.values[i].rows().into_iter().map(|r| r.to_vec()).collect()
}

fn lin(model: &Model, x: &M, prefix: &str) -> M {
    let w = get(model, &format!("{prefix}.weight"));
    let b = &get(model, &format!("{prefix}.bias"))[0];
    x.iter()
        .map(|row| (0..b.len()).map(|j| b[j] + row.iter().zip(&w).map(|(xi, wr)| xi * wr[j]).sum::<f64>()).collect())
        .collect()
}

fn norm(model: &Model, x: &M, prefix: &str) -> M {
    let g = &get(model, &format!("{prefix}.gain"))[0];
    let b = &get(model, &format!("{prefix}.bias"))[0];
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let s = (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(j, v)| (v - mean) / s * g[j] + b[j]).collect()
        })
        .collect()
}

fn attention(model: &Model, q_in: &M, kv_in: &M, prefix: &str, causal: bool) -> M {
    let q = lin(model, q_in, &format!("{prefix}.q"));
    let k = lin(model, kv_in, &format!("{prefix}.k"));
    let v = lin(model, kv_in, &format!("{prefix}.v"));
    let d = q[0].len() as f64;
    let mut out = Vec::new();
    for (i, qi) in q.iter().enumerate() {
        let visible = if causal { i + 1 } else { k.len() };
        let scores: Vec<f64> =
            (0..visible).map(|j| qi.iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = e.iter().sum();
        out.push((0..v[0].len()).map(|c| (0..visible).map(|j| e[j] / z * v[j][c]).sum()).collect());
    }
    lin(model, &out, &format!("{prefix}.o"))
}

fn ffn(model: &Model, x: &M, prefix: &str) -> M {
    let h = lin(model, x, &format!("{prefix}.ff1"));
    let h: M = h.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    lin(model, &h, &format!("{prefix}.ff2"))
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn embed(model: &Model, table: &str, ids: &[u32]) -> M {
    let e = get(model, table);
    let d = e[0].len();
    ids.iter()
        .enumerate()
        .map(|(pos, &id)| {
            (0..d)
                .map(|i| {
                    let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                    let pe = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                    e[id as usize][i] * (d as f64).sqrt() + pe
                })
                .collect()
        })
        .collect()
}

fn reference_logits(model: &Model, src: &[u32], tgt: &[u32]) -> M {
    let mut x = embed(model, "src_embedding", src);
    let h = norm(model, &x, "encoder.0.ln1");
    x = add(&x, &attention(model, &h, &h, "encoder.0.self_attn", false));
    let h = norm(model, &x, "encoder.0.ln2");
    x = add(&x, &ffn(model, &h, "encoder.0"));
    let mem = norm(model, &x, "encoder.ln");

    let mut y = embed(model, "tgt_embedding", tgt);
    let h = norm(model, &y, "decoder.0.ln1");
    y = add(&y, &attention(model, &h, &h, "decoder.0.self_attn", true));
    let h = norm(model, &y, "decoder.0.ln2");
    y = add(&y, &attention(model, &h, &mem, "decoder.0.cross_attn", false));
    let h = norm(model, &y, "decoder.0.ln3");
    y = add(&y, &ffn(model, &h, "decoder.0"));
    let y = norm(model, &y, "decoder.ln");
    lin(model, &y, "output")
}

#[test]
fn transformer_matches_reference_forward() {
    let cfg = ModelConfig { embed_dim: 4, hidden_dim: 4, ff_dim: 6, layers: 1, heads: 1, ..small(Arch::Transformer) };
    for seed in 0..3 {
        let model = Model::new(cfg.clone(), seed).unwrap();
        let (src, tgt) = ([4u32, 7], [BOS, 5]);
        let got = model.forward(&src, &tgt).unwrap();
        let want = reference_logits(&model, &src, &tgt);
        assert_eq!(got.dim(), (2, 13));
        for (i, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                assert!((got[[i, j]] - w).abs() < 1e-6, "seed {seed} [{i},{j}]: {} vs {w}", got[[i, j]]);
            }
        }
    }
}

// ---- loss ----

#[test]
fn uniform_logits_give_log_vocab() {
    let v = 37;
    let logits = Array2::zeros((4, v));
    let l = loss(&logits, &[5, 6, EOS, 9]).unwrap();
    assert!((l - (v as f64).ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_logits_give_near_zero_loss() {
    let mut logits = Array2::zeros((2, 10));
    logits[[0, 4]] = 60.0;
    logits[[1, EOS as usize]] = 60.0;
    assert!(loss(&logits, &[4, EOS]).unwrap() < 1e-20);
}

#[test]
fn two_token_hand_computed_nll() {
    let logits = array![[1.0, 2.0, 0.5, -1.0], [0.0, -0.5, 3.0, 1.0], [9.0, 9.0, 9.0, 9.0]];
    let nll = |row: [f64; 4], t: usize| {
        let z: f64 = row.iter().map(|v: &f64| v.exp()).sum();
        -(row[t].exp() / z).ln()
    };
    let want = (nll([1.0, 2.0, 0.5, -1.0], 1) + nll([0.0, -0.5, 3.0, 1.0], 2)) / 2.0;
    let got = loss(&logits, &[1, 2, PAD]).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn all_pad_targets_are_rejected() {
    let logits = Array2::zeros((3, 5));
    assert!(matches!(loss(&logits, &[PAD, PAD, PAD]), Err(ModelError::EmptyTarget)));
    assert!(matches!(loss(&logits, &[PAD, PAD]), Err(ModelError::Shape(_))));
}

// ---- decoding ----

#[test]
fn eos_biased_output_decodes_empty() {
    for arch in [Arch::Transformer, Arch::Seq2Seq] {
        let mut model = Model::new(small(arch), 1).unwrap();
        let i = model.params.index_of("output.bias").unwrap();
        model.params.values[i][[0, EOS as usize]] = 1e6;
        let model = Model::from_params(model.config.clone(), model.params.clone()).unwrap();
        assert_eq!(model.greedy_decode(&[4, 5, 6], 6).unwrap(), Vec::<u32>::new(), "{arch}");
    }
}

#[test]
fn decode_respects_length_and_reserved_ids() {
    for arch in [Arch::Transformer, Arch::Seq2Seq] {
        for seed in 0..4 {
            let mut model = Model::new(small(arch), seed).unwrap();
            // push EOS down so decodes run to the length limit
            let i = model.params.index_of("output.bias").unwrap();
            model.params.values[i][[0, EOS as usize]] = -1e6;
            let model = Model::from_params(model.config.clone(), model.params.clone()).unwrap();
            for max_len in [0, 1, 3, 6, 50] {
                let out = model.greedy_decode(&[4, 8, 10, 4], max_len).unwrap();
                assert_eq!(out.len(), max_len.min(6), "{arch} seed {seed}");
                assert!(out.iter().all(|&t| t > 3), "{arch}: reserved id in {out:?}");
            }
        }
    }
}

#[test]
fn batch_and_single_decodes_agree() {
    let model = Model::new(small(Arch::Transformer), 2).unwrap();
    let srcs: Vec<Vec<u32>> = (0..5).map(|i| (0..3 + i).map(|j| 4 + ((i + j) % 7) as u32).collect()).collect();
    let refs: Vec<&[u32]> = srcs.iter().map(Vec::as_slice).collect();
    let batch = model.greedy_decode_batch(&refs, 6).unwrap();
    for (s, b) in refs.iter().zip(&batch) {
        assert_eq!(&model.greedy_decode(s, 6).unwrap(), b);
    }
}

#[test]
fn out_of_range_ids_are_rejected() {
    let model = Model::new(small(Arch::Transformer), 0).unwrap();
    assert!(model.forward(&[99], &[BOS]).is_err());
    assert!(model.forward(&[4], &[BOS, 13]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parameter_count_matches_tensors(
        transformer in any::<bool>(),
        heads in 1usize..4,
        width in 1usize..4,
        ff_dim in 1usize..10,
        layers in 1usize..3,
        vs in 2usize..20,
        vt in 4usize..20,
        tie in any::<bool>(),
    ) {
        let cfg = if transformer {
            let d = heads * width;
            ModelConfig { embed_dim: d, hidden_dim: d, ff_dim, layers, heads, tie_embeddings: tie, ..ModelConfig::transformer(vs, vt) }
        } else {
            ModelConfig { embed_dim: 2 * width + 1, hidden_dim: 2 * width, layers, tie_embeddings: tie, ..ModelConfig::seq2seq(vs, vt) }
        };
        let model = Model::new(cfg.clone(), 0).unwrap();
        prop_assert_eq!(parameter_count(&cfg), model.params.scalar_count());
    }
}
