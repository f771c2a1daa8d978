//! Language model architectures and losses.
//!
//! Two head designs share one stacked-LSTM encoder: a plain affine softmax
//! head, and a mixture of softmaxes whose components apply per-component
//! tanh projections over a shared output embedding, mixed by a
//! context-dependent softmax prior. With K = 1 the mixture head *is* the
//! affine head (same parameters), so the degenerate mixture reduces exactly
//! to the single-softmax model.
//!
//! Training variants wire targets differently: word prediction, multi-task
//! word+stem prediction with a λ-weighted loss, and a stem-target mixture
//! model used for word/stem probability composition at evaluation time.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use train::{train, AuxTarget, EpochLog, TrainOutcome, TrainParams};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BatchStep;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamSet, Tensor, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Base,
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heads {
    WordOnly,
    WordAndStem,
}

/// Everything needed to reconstruct a model's parameter shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Number of mixture components K (1 = single softmax).
    pub k_mixtures: usize,
    pub dropout: f64,
    pub arch: Arch,
    pub heads: Heads,
    /// Weight λ of the primary loss in λ·L_primary + (1-λ)·L_aux.
    pub mtl_lambda: f64,
    /// Number of leading epochs during which the switching auxiliary task
    /// uses stem targets before moving to word targets.
    pub s2w_switch_epoch: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-scale defaults for a given vocabulary; callers override dims for
    /// desk-scale runs.
    pub fn with_vocab(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 256,
            hidden_dim: 512,
            num_layers: 2,
            k_mixtures: 3,
            dropout: 0.3,
            arch: Arch::Base,
            heads: Heads::WordOnly,
            mtl_lambda: 0.5,
            s2w_switch_epoch: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 || self.embed_dim < 1 || self.hidden_dim < 1 || self.num_layers < 1
        {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if self.k_mixtures < 1 {
            return Err(Error::Config("k_mixtures must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mtl_lambda) {
            return Err(Error::Config(format!(
                "mtl_lambda must be in [0, 1], got {}",
                self.mtl_lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// The trainable model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Single-softmax word predictor.
    Base,
    /// Multi-task: auxiliary head also predicts words.
    MtlW,
    /// Multi-task: auxiliary head predicts stems.
    MtlS,
    /// Multi-task: auxiliary head predicts stems for the first epochs, then
    /// words.
    MtlS2w,
    /// Mixture of softmaxes over words.
    MixW,
    /// Mixture of softmaxes trained with stem targets (the q model of the
    /// word/stem composition), with its own encoder.
    MixStem,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::Base,
    Variant::MtlW,
    Variant::MtlS,
    Variant::MtlS2w,
    Variant::MixW,
    Variant::MixStem,
];

impl Variant {
    pub fn arch(self) -> Arch {
        match self {
            Variant::Base | Variant::MtlW | Variant::MtlS | Variant::MtlS2w => Arch::Base,
            Variant::MixW | Variant::MixStem => Arch::Mix,
        }
    }

    pub fn heads(self) -> Heads {
        match self {
            Variant::MtlW | Variant::MtlS | Variant::MtlS2w => Heads::WordAndStem,
            _ => Heads::WordOnly,
        }
    }

    /// Whether the variant's primary task predicts stems instead of words.
    pub fn primary_predicts_stems(self) -> bool {
        matches!(self, Variant::MixStem)
    }

    pub fn needs_stem_map(self) -> bool {
        matches!(self, Variant::MtlS | Variant::MtlS2w | Variant::MixStem)
    }

    /// The auxiliary task's target kind at a given 0-based epoch.
    pub fn aux_target(self, epoch: usize, s2w_switch_epoch: usize) -> Option<AuxTarget> {
        match self {
            Variant::MtlW => Some(AuxTarget::Word),
            Variant::MtlS => Some(AuxTarget::Stem),
            Variant::MtlS2w => {
                if epoch < s2w_switch_epoch {
                    Some(AuxTarget::Stem)
                } else {
                    Some(AuxTarget::Word)
                }
            }
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Base => "base",
            Variant::MtlW => "mtl-w",
            Variant::MtlS => "mtl-s",
            Variant::MtlS2w => "mtl-s2w",
            Variant::MixW => "mix-w",
            Variant::MixStem => "mix-stem",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "mtl-w" => Ok(Variant::MtlW),
            "mtl-s" => Ok(Variant::MtlS),
            "mtl-s2w" => Ok(Variant::MtlS2w),
            "mix-w" => Ok(Variant::MixW),
            "mix-stem" => Ok(Variant::MixStem),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected base|mtl-w|mtl-s|mtl-s2w|mix-w|mix-stem)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
struct LstmIds {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct AffineIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
enum HeadIds {
    Affine(AffineIds),
    Mixture {
        comps: Vec<AffineIds>,
        prior: AffineIds,
        out: AffineIds,
    },
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: ParamId,
    lstm: Vec<LstmIds>,
    head: HeadIds,
    aux: Option<AffineIds>,
}

/// Carried (h, c) pair per LSTM layer.
#[derive(Debug, Clone)]
pub struct LstmState {
    layers: Vec<(Tensor, Tensor)>,
}

/// A parameterized language model: embedding, stacked LSTM encoder, and a
/// softmax or mixture-of-softmax head (plus an optional auxiliary head).
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub variant: Variant,
    pub params: ParamSet,
    layout: Layout,
}

const INIT_RANGE: f64 = 0.1;

impl Model {
    /// Initialize with the seed recorded in the config.
    pub fn new(config: ModelConfig, variant: Variant) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Model::init_with_rng(config, variant, &mut rng)
    }

    /// Initialize drawing all weights from `rng` in a fixed creation order:
    /// embedding, LSTM layers, primary head, auxiliary head. Weight matrices
    /// are uniform(-0.1, 0.1); biases are zero.
    pub fn init_with_rng(
        config: ModelConfig,
        variant: Variant,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if config.arch != variant.arch() || config.heads != variant.heads() {
            return Err(Error::Config(format!(
                "variant {variant} requires arch {:?} and heads {:?}",
                variant.arch(),
                variant.heads()
            )));
        }
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let mut params = ParamSet::new();

        let embedding = params.add(
            "embedding",
            Tensor::uniform(v, e, -INIT_RANGE, INIT_RANGE, rng),
        );
        let mut lstm = Vec::new();
        for l in 0..config.num_layers {
            let in_dim = if l == 0 { e } else { h };
            let wx = params.add(
                format!("lstm{l}.wx"),
                Tensor::uniform(in_dim, 4 * h, -INIT_RANGE, INIT_RANGE, rng),
            );
            let wh = params.add(
                format!("lstm{l}.wh"),
                Tensor::uniform(h, 4 * h, -INIT_RANGE, INIT_RANGE, rng),
            );
            let b = params.add(format!("lstm{l}.b"), Tensor::zeros(1, 4 * h));
            lstm.push(LstmIds { wx, wh, b });
        }

        let head = match (config.arch, config.k_mixtures) {
            (Arch::Base, _) | (Arch::Mix, 1) => HeadIds::Affine(AffineIds {
                w: params.add("head.w", Tensor::uniform(h, v, -INIT_RANGE, INIT_RANGE, rng)),
                b: params.add("head.b", Tensor::zeros(1, v)),
            }),
            (Arch::Mix, k) => {
                let comps = (0..k)
                    .map(|ki| AffineIds {
                        w: params.add(
                            format!("head.comp{ki}.w"),
                            Tensor::uniform(h, h, -INIT_RANGE, INIT_RANGE, rng),
                        ),
                        b: params.add(format!("head.comp{ki}.b"), Tensor::zeros(1, h)),
                    })
                    .collect();
                let prior = AffineIds {
                    w: params.add(
                        "head.prior.w",
                        Tensor::uniform(h, k, -INIT_RANGE, INIT_RANGE, rng),
                    ),
                    b: params.add("head.prior.b", Tensor::zeros(1, k)),
                };
                let out = AffineIds {
                    w: params.add(
                        "head.out.w",
                        Tensor::uniform(h, v, -INIT_RANGE, INIT_RANGE, rng),
                    ),
                    b: params.add("head.out.b", Tensor::zeros(1, v)),
                };
                HeadIds::Mixture { comps, prior, out }
            }
        };

        let aux = match config.heads {
            Heads::WordOnly => None,
            Heads::WordAndStem => Some(AffineIds {
                w: params.add("aux.w", Tensor::uniform(h, v, -INIT_RANGE, INIT_RANGE, rng)),
                b: params.add("aux.b", Tensor::zeros(1, v)),
            }),
        };

        Ok(Model {
            config,
            variant,
            params,
            layout: Layout {
                embedding,
                lstm,
                head,
                aux,
            },
        })
    }

    pub fn init_state(&self, batch: usize) -> LstmState {
        LstmState {
            layers: (0..self.config.num_layers)
                .map(|_| {
                    (
                        Tensor::zeros(batch, self.config.hidden_dim),
                        Tensor::zeros(batch, self.config.hidden_dim),
                    )
                })
                .collect(),
        }
    }

    /// Run the encoder over a `(batch, len)` row-major id block, carrying
    /// `state` across calls. Returns the stacked context vectors, one row
    /// per position in time-major order (`row = t * batch + b`).
    pub fn encode_window(
        &self,
        g: &mut Graph,
        inputs: &[u32],
        batch: usize,
        len: usize,
        state: &mut LstmState,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Value> {
        if inputs.len() != batch * len || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "encode_window",
                lhs: format!("{} ids", inputs.len()),
                rhs: format!("{batch}x{len}"),
            });
        }
        let emb = g.param(&self.params, self.layout.embedding);
        let weights: Vec<(Value, Value, Value)> = self
            .layout
            .lstm
            .iter()
            .map(|ids| {
                (
                    g.param(&self.params, ids.wx),
                    g.param(&self.params, ids.wh),
                    g.param(&self.params, ids.b),
                )
            })
            .collect();

        let p = self.config.dropout;
        let mut layer_state: Vec<(Value, Value)> = state
            .layers
            .iter()
            .map(|(h, c)| (g.constant(h.clone()), g.constant(c.clone())))
            .collect();

        let mut collected = Vec::with_capacity(len);
        let mut ids_t = vec![0u32; batch];
        for t in 0..len {
            for b in 0..batch {
                ids_t[b] = inputs[b * len + t];
            }
            let mut x = g.embedding_lookup(emb, &ids_t)?;
            if let Some(rng) = dropout_rng.as_mut() {
                x = g.dropout(x, p, rng)?;
            }
            for (l, &(wx, wh, b)) in weights.iter().enumerate() {
                let (h_prev, c_prev) = layer_state[l];
                let (h, c) = g.lstm_cell(x, h_prev, c_prev, wx, wh, b)?;
                layer_state[l] = (h, c);
                x = h;
                if l + 1 < weights.len() {
                    if let Some(rng) = dropout_rng.as_mut() {
                        x = g.dropout(x, p, rng)?;
                    }
                }
            }
            collected.push(x);
        }

        for (l, (h, c)) in layer_state.into_iter().enumerate() {
            state.layers[l] = (g.detach(h), g.detach(c));
        }

        let mut h_all = g.concat_rows(&collected)?;
        if let Some(rng) = dropout_rng.as_mut() {
            h_all = g.dropout(h_all, p, rng)?;
        }
        Ok(h_all)
    }

    fn affine(&self, g: &mut Graph, x: Value, ids: &AffineIds) -> Result<Value> {
        let w = g.param(&self.params, ids.w);
        let b = g.param(&self.params, ids.b);
        let xw = g.matmul(x, w)?;
        g.add_row_broadcast(xw, b)
    }

    /// Primary-head log-probabilities over the vocabulary for each context
    /// row. The K-component mixture computes per-component log-softmaxes
    /// over a shared output projection and mixes them under a softmax prior.
    pub fn head_log_probs(&self, g: &mut Graph, h_all: Value) -> Result<Value> {
        match &self.layout.head {
            HeadIds::Affine(ids) => {
                let logits = self.affine(g, h_all, ids)?;
                g.log_softmax(logits)
            }
            HeadIds::Mixture { comps, prior, out } => {
                let prior_logits = self.affine(g, h_all, prior)?;
                let log_prior = g.log_softmax(prior_logits)?;
                let mut log_comps = Vec::with_capacity(comps.len());
                for comp in comps {
                    let proj = self.affine(g, h_all, comp)?;
                    let ck = g.tanh(proj)?;
                    let logits = self.affine(g, ck, out)?;
                    log_comps.push(g.log_softmax(logits)?);
                }
                g.log_mixture(log_prior, &log_comps)
            }
        }
    }

    /// Auxiliary-head log-probabilities (multi-task variants only).
    pub fn aux_log_probs(&self, g: &mut Graph, h_all: Value) -> Result<Value> {
        let ids = self
            .layout
            .aux
            .as_ref()
            .ok_or_else(|| Error::Config("model has no auxiliary head".into()))?;
        let logits = self.affine(g, h_all, ids)?;
        g.log_softmax(logits)
    }

    /// Encoder plus primary head in evaluation mode (no dropout).
    pub fn window_log_probs(
        &self,
        g: &mut Graph,
        inputs: &[u32],
        batch: usize,
        len: usize,
        state: &mut LstmState,
    ) -> Result<Value> {
        let h_all = self.encode_window(g, inputs, batch, len, state, None)?;
        self.head_log_probs(g, h_all)
    }

    /// Next-word distribution after consuming `context` from a zero state.
    /// An empty context applies the head to the zero context vector.
    pub fn next_word_dist(&self, context: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let log_probs = if context.is_empty() {
            let h = g.constant(Tensor::zeros(1, self.config.hidden_dim));
            self.head_log_probs(&mut g, h)?
        } else {
            let mut state = self.init_state(1);
            self.window_log_probs(&mut g, context, 1, context.len(), &mut state)?
        };
        let t = g.value(log_probs);
        let last = t.row(t.rows() - 1);
        Ok(last.iter().map(|v| v.exp()).collect())
    }

    /// Evaluation-mode mean negative log-likelihood over one batch step.
    /// `target_map` rewrites each target id before scoring (stem targets).
    pub fn batch_nll(
        &self,
        step: &BatchStep,
        batch: usize,
        state: &mut LstmState,
        target_map: Option<&[u32]>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let lp = self.window_log_probs(&mut g, &step.inputs, batch, step.len, state)?;
        let targets = time_major_targets(&step.targets, batch, step.len, target_map);
        let loss = g.nll_mean(lp, &targets)?;
        g.value(loss).item()
    }
}

/// Reorder a `(batch, len)` row-major target block into time-major order
/// (matching the encoder's stacked output), applying `target_map` if given.
pub fn time_major_targets(
    targets: &[u32],
    batch: usize,
    len: usize,
    target_map: Option<&[u32]>,
) -> Vec<u32> {
    let mut out = Vec::with_capacity(targets.len());
    for t in 0..len {
        for b in 0..batch {
            let id = targets[b * len + t];
            out.push(match target_map {
                Some(map) => map[id as usize],
                None => id,
            });
        }
    }
    out
}

/// The multi-task objective λ·L_w + (1-λ)·L_s.
pub fn mtl_loss(loss_word: f64, loss_stem: f64, lambda: f64) -> f64 {
    lambda * loss_word + (1.0 - lambda) * loss_stem
}

/// Stem-class structure over vocabulary ids: a total stem assignment and
/// its inverse image, grouped for composition.
#[derive(Debug, Clone)]
pub struct StemClasses {
    stem_of: Vec<u32>,
    /// (stem id, member word ids), ordered by stem id.
    classes: Vec<(u32, Vec<u32>)>,
    /// word id → index into `classes`.
    class_index: Vec<usize>,
}

impl StemClasses {
    pub fn new(stem_of: Vec<u32>) -> Result<Self> {
        let n = stem_of.len();
        for (w, &s) in stem_of.iter().enumerate() {
            if s as usize >= n {
                return Err(Error::VocabMismatch(format!(
                    "stem id {s} of word {w} is outside the vocabulary"
                )));
            }
        }
        let mut by_stem: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
        for (w, &s) in stem_of.iter().enumerate() {
            by_stem.entry(s).or_default().push(w as u32);
        }
        let classes: Vec<(u32, Vec<u32>)> = by_stem.into_iter().collect();
        let mut class_index = vec![0usize; n];
        for (ci, (_, members)) in classes.iter().enumerate() {
            for &w in members {
                class_index[w as usize] = ci;
            }
        }
        Ok(StemClasses {
            stem_of,
            classes,
            class_index,
        })
    }

    pub fn identity(n: usize) -> Self {
        StemClasses::new((0..n as u32).collect()).expect("identity map is valid")
    }

    pub fn vocab_size(&self) -> usize {
        self.stem_of.len()
    }

    pub fn stem_of(&self, word: u32) -> u32 {
        self.stem_of[word as usize]
    }

    pub fn stem_ids(&self) -> &[u32] {
        &self.stem_of
    }

    pub fn classes(&self) -> &[(u32, Vec<u32>)] {
        &self.classes
    }

    pub fn class_members(&self, word: u32) -> &[u32] {
        &self.classes[self.class_index[word as usize]].1
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = values.map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Compose word and stem log-distributions:
/// `out(w) = log r(w) + log q'_stem(w)` where `r(w) = p(w)/p'_stem(w)`,
/// `p'_s = Σ_{w∈S(s)} p(w)` and `q'_s = Σ_{w∈S(s)} q(w)`.
pub fn mixws_compose_log(log_p: &[f64], log_q: &[f64], classes: &StemClasses) -> Result<Vec<f64>> {
    let n = classes.vocab_size();
    if log_p.len() != n || log_q.len() != n {
        return Err(Error::VocabMismatch(format!(
            "distribution sizes {}/{} do not match vocabulary {n}",
            log_p.len(),
            log_q.len()
        )));
    }
    let mut out = vec![0.0; n];
    for (_, members) in classes.classes() {
        let lp_class = log_sum_exp(members.iter().map(|&w| log_p[w as usize]));
        if lp_class == f64::NEG_INFINITY {
            return Err(Error::Invariant(
                "word distribution assigns zero mass to an entire stem class".into(),
            ));
        }
        let lq_class = log_sum_exp(members.iter().map(|&w| log_q[w as usize]));
        for &w in members {
            out[w as usize] = log_p[w as usize] - lp_class + lq_class;
        }
    }
    Ok(out)
}

/// Probability-space wrapper around [`mixws_compose_log`].
pub fn mixws_compose(p: &[f64], q: &[f64], classes: &StemClasses) -> Result<Vec<f64>> {
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let out = mixws_compose_log(&log_p, &log_q, classes)?;
    Ok(out.into_iter().map(f64::exp).collect())
}

/// The within-class conditionals r(w) = p(w)/p'_stem(w).
pub fn within_class_conditionals(p: &[f64], classes: &StemClasses) -> Result<Vec<f64>> {
    let n = classes.vocab_size();
    if p.len() != n {
        return Err(Error::VocabMismatch(format!(
            "distribution size {} does not match vocabulary {n}",
            p.len()
        )));
    }
    let mut out = vec![0.0; n];
    for (_, members) in classes.classes() {
        let mass: f64 = members.iter().map(|&w| p[w as usize]).sum();
        if mass <= 0.0 {
            return Err(Error::Invariant(
                "word distribution assigns zero mass to an entire stem class".into(),
            ));
        }
        for &w in members {
            out[w as usize] = p[w as usize] / mass;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(vocab: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            embed_dim: 4,
            hidden_dim: 5,
            num_layers: 1,
            k_mixtures: if variant.arch() == Arch::Mix { 2 } else { 1 },
            dropout: 0.0,
            arch: variant.arch(),
            heads: variant.heads(),
            mtl_lambda: 0.5,
            s2w_switch_epoch: 1,
            seed: 9,
        }
    }

    #[test]
    fn zeroed_parameters_give_uniform_distribution() {
        let mut m = Model::new(tiny_config(11, Variant::Base), Variant::Base).unwrap();
        for p in m.params.iter_mut() {
            p.value.fill(0.0);
        }
        for ctx in [vec![], vec![3, 1, 4]] {
            let dist = m.next_word_dist(&ctx).unwrap();
            for v in &dist {
                assert!((v - 1.0 / 11.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k1_mixture_is_a_single_softmax_head() {
        let cfg = ModelConfig {
            k_mixtures: 1,
            ..tiny_config(9, Variant::MixW)
        };
        let mix = Model::new(cfg.clone(), Variant::MixW).unwrap();
        // a base model with identical init draws has identical parameters
        let base_cfg = ModelConfig {
            arch: Arch::Base,
            ..cfg
        };
        let base = Model::new(base_cfg, Variant::Base).unwrap();
        assert_eq!(mix.params.len(), base.params.len());
        for (a, b) in mix.params.iter().zip(base.params.iter()) {
            assert_eq!(a.value.data(), b.value.data(), "{} vs {}", a.name, b.name);
        }
        let ctx = [1, 2, 3, 4];
        let da = mix.next_word_dist(&ctx).unwrap();
        let db = base.next_word_dist(&ctx).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn k2_mixture_with_even_prior_averages_components() {
        let mut m = Model::new(tiny_config(6, Variant::MixW), Variant::MixW).unwrap();
        // zero the prior so it is exactly (0.5, 0.5)
        let prior_ids: Vec<usize> = (0..m.params.len())
            .filter(|&i| m.params.get(i).name.starts_with("head.prior"))
            .collect();
        for id in prior_ids {
            m.params.get_mut(id).value.fill(0.0);
        }
        let ctx = [0, 3, 5];
        let mixture = m.next_word_dist(&ctx).unwrap();

        // recompute the two component distributions by hand
        let mut g = Graph::new();
        let mut state = m.init_state(1);
        let h_all = m
            .encode_window(&mut g, &ctx, 1, ctx.len(), &mut state, None)
            .unwrap();
        let HeadIds::Mixture { comps, out, .. } = &m.layout.head else {
            panic!("expected mixture head");
        };
        let mut dists = Vec::new();
        for comp in comps {
            let proj = m.affine(&mut g, h_all, comp).unwrap();
            let ck = g.tanh(proj).unwrap();
            let logits = m.affine(&mut g, ck, out).unwrap();
            let lp = g.log_softmax(logits).unwrap();
            let t = g.value(lp);
            let row: Vec<f64> = t.row(t.rows() - 1).iter().map(|v| v.exp()).collect();
            dists.push(row);
        }
        for j in 0..6 {
            let expect = 0.5 * dists[0][j] + 0.5 * dists[1][j];
            assert!((mixture[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        for variant in [Variant::Base, Variant::MixW] {
            let m = Model::new(tiny_config(13, variant), variant).unwrap();
            let d = m.next_word_dist(&[1, 5, 2, 8]).unwrap();
            let sum: f64 = d.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "{variant}: sum {sum}");
            assert!(d.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn causality_ignores_future_tokens() {
        let m = Model::new(tiny_config(10, Variant::Base), Variant::Base).unwrap();
        let d1 = m.next_word_dist(&[1, 2, 3]).unwrap();
        // the distribution after [1,2,3] cannot depend on what follows
        let mut g = Graph::new();
        let mut state = m.init_state(1);
        let lp = m
            .window_log_probs(&mut g, &[1, 2, 3, 9, 7], 1, 5, &mut state)
            .unwrap();
        let t = g.value(lp);
        let d2: Vec<f64> = t.row(2).iter().map(|v| v.exp()).collect();
        assert_eq!(d1, d2);
    }

    #[test]
    fn mtl_loss_is_exact_linear_combination() {
        assert_eq!(mtl_loss(2.0, 1.0, 1.0), 2.0);
        assert_eq!(mtl_loss(2.0, 1.0, 0.0), 1.0);
        assert!((mtl_loss(2.0, 1.0, 0.25) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn compose_matches_hand_computed_example() {
        // V = {a, ab, b}, stems: a↦a, ab↦a, b↦b
        let classes = StemClasses::new(vec![0, 0, 2]).unwrap();
        let p = [0.5, 0.3, 0.2];
        let q = [0.6, 0.1, 0.3];
        let r = within_class_conditionals(&p, &classes).unwrap();
        assert!((r[0] - 0.625).abs() < 1e-12);
        assert!((r[1] - 0.375).abs() < 1e-12);
        assert!((r[2] - 1.0).abs() < 1e-12);
        let out = mixws_compose(&p, &q, &classes).unwrap();
        assert!((out[0] - 0.4375).abs() < 1e-12);
        assert!((out[1] - 0.2625).abs() < 1e-12);
        assert!((out[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn compose_identity_map_returns_q() {
        let classes = StemClasses::identity(4);
        let p = [0.1, 0.2, 0.3, 0.4];
        let q = [0.4, 0.3, 0.2, 0.1];
        let out = mixws_compose(&p, &q, &classes).unwrap();
        for (o, e) in out.iter().zip(q.iter()) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_with_p_equal_q_returns_p() {
        let classes = StemClasses::new(vec![0, 0, 2, 2, 2]).unwrap();
        let p = [0.3, 0.1, 0.25, 0.2, 0.15];
        let out = mixws_compose(&p, &p, &classes).unwrap();
        for (o, e) in out.iter().zip(p.iter()) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_rejects_zero_mass_class() {
        let classes = StemClasses::new(vec![0, 0, 2]).unwrap();
        let p = [0.0, 0.0, 1.0];
        let q = [0.5, 0.25, 0.25];
        assert!(matches!(
            mixws_compose(&p, &q, &classes),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn variant_schedules() {
        assert_eq!(Variant::MtlS2w.aux_target(0, 5), Some(AuxTarget::Stem));
        assert_eq!(Variant::MtlS2w.aux_target(4, 5), Some(AuxTarget::Stem));
        assert_eq!(Variant::MtlS2w.aux_target(5, 5), Some(AuxTarget::Word));
        assert_eq!(Variant::MtlS.aux_target(9, 5), Some(AuxTarget::Stem));
        assert_eq!(Variant::MtlW.aux_target(0, 5), Some(AuxTarget::Word));
        assert_eq!(Variant::Base.aux_target(0, 5), None);
        assert_eq!("mix-stem".parse::<Variant>().unwrap(), Variant::MixStem);
        assert!("mixws".parse::<Variant>().is_err());
    }
}
