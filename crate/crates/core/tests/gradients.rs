//! Finite-difference verification of every trainable architecture.
//!
//! Parameters are re-drawn from a wider uniform range (biases included)
//! before checking so no gate sits in a near-zero-gradient regime, where
//! the relative-error metric would measure central-difference noise
//! instead of the backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stemlm_core::corpus::BatchStep;
use stemlm_core::models::{self, time_major_targets, Model, ModelConfig, Variant};
use stemlm_core::numerics::{grad_check, Graph, Tensor};

fn config(vocab: usize, variant: Variant, k: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: 6,
        hidden_dim: 6,
        num_layers: 2,
        k_mixtures: k,
        dropout: 0.0,
        arch: variant.arch(),
        heads: variant.heads(),
        mtl_lambda: 0.5,
        s2w_switch_epoch: 1,
        seed: 23,
    }
}

fn probe_step(vocab: usize) -> BatchStep {
    let batch = 2;
    let len = 4;
    let inputs: Vec<u32> = (0..batch * len).map(|i| (i * 3 % vocab) as u32).collect();
    let targets: Vec<u32> = (0..batch * len).map(|i| ((i * 5 + 1) % vocab) as u32).collect();
    BatchStep {
        inputs,
        targets,
        len,
    }
}

/// Build the variant's full training loss over one window and check all
/// parameter gradients against central differences.
fn check_variant(variant: Variant, k: usize, tolerance: f64) {
    let vocab = 12;
    let cfg = config(vocab, variant, k);
    let mut model = Model::new(cfg, variant).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(915);
    for p in model.params.iter_mut() {
        let (r, c) = p.value.shape();
        p.value = Tensor::uniform(r, c, -0.6, 0.6, &mut rng);
    }
    let step = probe_step(vocab);
    let stem_map: Vec<u32> = (0..vocab as u32).map(|w| w / 3 * 3).collect();

    let run = |model: &mut Model, with_grad: bool| -> stemlm_core::Result<f64> {
        let mut g = Graph::new();
        let mut state = model.init_state(2);
        let h_all = model.encode_window(&mut g, &step.inputs, 2, step.len, &mut state, None)?;
        let primary_map = if variant.primary_predicts_stems() {
            Some(stem_map.as_slice())
        } else {
            None
        };
        let targets = time_major_targets(&step.targets, 2, step.len, primary_map);
        let lp = model.head_log_probs(&mut g, h_all)?;
        let primary = g.nll_mean(lp, &targets)?;
        let loss = if variant.heads() == models::Heads::WordAndStem {
            let aux_targets = time_major_targets(&step.targets, 2, step.len, Some(&stem_map));
            let aux_lp = model.aux_log_probs(&mut g, h_all)?;
            let aux = g.nll_mean(aux_lp, &aux_targets)?;
            let a = g.scale(primary, 0.5)?;
            let b = g.scale(aux, 0.5)?;
            g.add(a, b)?
        } else {
            primary
        };
        if with_grad {
            g.backward(loss, &mut model.params)?;
        }
        g.value(loss).item()
    };

    // the closure needs the model split from its params for grad_check
    let mut params = std::mem::take(&mut model.params);
    let report = grad_check(
        &mut params,
        |ps, with_grad| {
            model.params = std::mem::take(ps);
            let r = run(&mut model, with_grad);
            *ps = std::mem::take(&mut model.params);
            r
        },
        1e-5,
        25,
        42,
    )
    .unwrap();
    assert!(
        report.max_rel_error < tolerance,
        "{variant}: max relative error {} over {} entries",
        report.max_rel_error,
        report.entries_checked
    );
}

#[test]
fn base_architecture_gradients() {
    check_variant(Variant::Base, 1, 1e-4);
}

#[test]
fn mtl_architecture_gradients_cover_both_heads() {
    check_variant(Variant::MtlS, 1, 1e-4);
}

#[test]
fn mixture_architecture_gradients() {
    check_variant(Variant::MixW, 2, 1e-4);
}

#[test]
fn stem_mixture_architecture_gradients() {
    check_variant(Variant::MixStem, 2, 1e-4);
}
