//! Training loop for all model variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{batchify, EncodedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{self, EvalFlags};
use crate::models::{time_major_targets, Model, ModelConfig, StemClasses, Variant};
use crate::numerics::{clip_global_norm, Graph, Optimizer, OptimizerParams};

/// Training hyperparameters (model shapes live in [`ModelConfig`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub optimizer: OptimizerParams,
    pub clip_norm: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 15,
            batch_size: 20,
            bptt_len: 35,
            optimizer: OptimizerParams::default(),
            clip_norm: 5.0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.bptt_len == 0 {
            return Err(Error::Config(
                "epochs, batch_size and bptt_len must be at least 1".into(),
            ));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        self.optimizer.validate()
    }
}

/// What the auxiliary head is predicting during an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTarget {
    Word,
    Stem,
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub loss_primary: f64,
    pub loss_aux: Option<f64>,
    pub dev_ppl: f64,
    pub lr: f64,
    pub aux_target: Option<AuxTarget>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Optimizer,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

/// Train one variant. Stem-target variants require `stem_classes` over the
/// same vocabulary. Fully deterministic for a given config and seed.
#[allow(clippy::too_many_arguments)]
pub fn train(
    config: &ModelConfig,
    variant: Variant,
    tp: &TrainParams,
    train_enc: &EncodedCorpus,
    dev_enc: &EncodedCorpus,
    vocab: &Vocabulary,
    stem_classes: Option<&StemClasses>,
    eval_flags: EvalFlags,
) -> Result<TrainOutcome> {
    tp.validate()?;
    if config.vocab_size != vocab.size() {
        return Err(Error::VocabMismatch(format!(
            "config vocab_size {} != vocabulary size {}",
            config.vocab_size,
            vocab.size()
        )));
    }
    if variant.needs_stem_map() && stem_classes.is_none() {
        return Err(Error::Config(format!(
            "variant {variant} requires a stem map"
        )));
    }
    if let Some(classes) = stem_classes {
        if classes.vocab_size() != vocab.size() {
            return Err(Error::VocabMismatch(format!(
                "stem map covers {} ids, vocabulary has {}",
                classes.vocab_size(),
                vocab.size()
            )));
        }
    }
    if config.s2w_switch_epoch >= tp.epochs && variant == Variant::MtlS2w {
        return Err(Error::Config(format!(
            "s2w_switch_epoch {} must be below the epoch count {}",
            config.s2w_switch_epoch, tp.epochs
        )));
    }

    let stream = batchify(train_enc, tp.batch_size, tp.bptt_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init_with_rng(config.clone(), variant, &mut rng)?;
    let mut opt = Optimizer::new(&tp.optimizer)?;

    let stem_ids = stem_classes.map(|c| c.stem_ids());
    let primary_map = if variant.primary_predicts_stems() {
        stem_ids
    } else {
        None
    };
    let lambda = config.mtl_lambda;
    let mut log = Vec::with_capacity(tp.epochs);

    for epoch in 0..tp.epochs {
        let aux_target = variant.aux_target(epoch, config.s2w_switch_epoch);
        let mut state = model.init_state(tp.batch_size);
        let mut primary_sum = 0.0;
        let mut aux_sum = 0.0;
        let mut token_total = 0usize;

        for step in &stream.steps {
            model.params.zero_grads();
            let mut g = Graph::new();
            let dropout_rng = if model.config.dropout > 0.0 {
                Some(&mut rng)
            } else {
                None
            };
            let h_all =
                model.encode_window(&mut g, &step.inputs, tp.batch_size, step.len, &mut state, dropout_rng)?;

            let primary_targets =
                time_major_targets(&step.targets, tp.batch_size, step.len, primary_map);
            let log_probs = model.head_log_probs(&mut g, h_all)?;
            let primary_loss = g.nll_mean(log_probs, &primary_targets)?;

            let tokens = primary_targets.len();
            primary_sum += g.value(primary_loss).item()? * tokens as f64;
            token_total += tokens;

            let total_loss = match aux_target {
                // λ = 1 leaves the auxiliary task with zero weight; skipping
                // it keeps the update stream identical to the word-only model.
                Some(_) if lambda == 1.0 => primary_loss,
                Some(target) => {
                    let map = match target {
                        AuxTarget::Word => None,
                        AuxTarget::Stem => stem_ids,
                    };
                    let aux_targets =
                        time_major_targets(&step.targets, tp.batch_size, step.len, map);
                    let aux_lp = model.aux_log_probs(&mut g, h_all)?;
                    let aux_loss = g.nll_mean(aux_lp, &aux_targets)?;
                    aux_sum += g.value(aux_loss).item()? * tokens as f64;
                    let a = g.scale(primary_loss, lambda)?;
                    let b = g.scale(aux_loss, 1.0 - lambda)?;
                    g.add(a, b)?
                }
                None => primary_loss,
            };

            g.backward(total_loss, &mut model.params)?;
            clip_global_norm(&mut model.params, tp.clip_norm);
            opt.step(&mut model.params)?;
        }

        let lr_used = opt.learning_rate;
        opt.decay_lr();

        let dev_ppl = eval::perplexity_mapped(&model, dev_enc, vocab, eval_flags, primary_map)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            loss_primary: primary_sum / token_total as f64,
            loss_aux: match aux_target {
                Some(_) if lambda < 1.0 => Some(aux_sum / token_total as f64),
                _ => None,
            },
            dev_ppl: dev_ppl.perplexity,
            lr: lr_used,
            aux_target,
        });
    }

    Ok(TrainOutcome {
        model,
        optimizer: opt,
        epochs_run: tp.epochs,
        log,
    })
}
