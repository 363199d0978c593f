use nomen_model::gradcheck::{gradient_check, tiny_config};
use nomen_model::Arch;

#[test]
fn both_architectures_pass_over_seeds() {
    for arch in [Arch::Transformer, Arch::Seq2Seq] {
        for seed in 0..10 {
            let r = gradient_check(&tiny_config(arch), seed).unwrap();
            println!("{arch} seed {seed}: {:.3e} at {} ({} checked, {} skipped)", r.max_rel_error, r.worst, r.checked, r.skipped);
            assert!(r.max_rel_error <= 1e-4, "{arch} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn oversized_config_rejected() {
    let cfg = nomen_model::ModelConfig::transformer(7, 9);
    assert!(gradient_check(&cfg, 0).is_err());
    let cfg = nomen_model::ModelConfig { embed_dim: 0, ..tiny_config(Arch::Transformer) };
    assert!(gradient_check(&cfg, 0).is_err());
}
