//! Training loop for the projection head: AdamW with linear warmup and
//! cosine decay, palindrome clip sampling with encoding augmentation, and
//! per-epoch trade-off snapshots.
//!
//! Determinism contract: results depend only on the corpus, the
//! configuration, and the seed. Every clip draws from its own counter-based
//! seed handed out by the master stream, and batch gradients reduce in item
//! order, so single-threaded and multi-threaded runs produce bit-identical
//! parameters.

use crate::data::{corpus_shape, sample_pair, VideoEmbeddingSequence};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_tradeoff, EvalOptions, TradeoffMetrics, DEFAULT_GAMMA};
use crate::objective::{total_loss, LossReport};
use crate::pea::{pea_augment, sinusoidal_grid, PositionalGrid};
use crate::projection::{init_linear, project_backward, project_rows, NormMode, ProjectionParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

/// Denominator inside the AdamW update.
pub const ADAM_EPS: f64 = 1e-8;

/// Training hyperparameters. The effective peak learning rate is
/// `base_lr * batch_size / lr_scale_divisor`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_scale_divisor: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_epochs: usize,
    pub temperature: f64,
    pub delta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            base_lr: 1e-4,
            lr_scale_divisor: 256.0,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            warmup_epochs: 1,
            temperature: 0.03,
            delta: 0.15,
            lambda: 1.0,
            alpha: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("training needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least one".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Parameter(format!(
                "warmup epochs ({}) must be fewer than total epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        for (name, value) in [("base_lr", self.base_lr), ("lr_scale_divisor", self.lr_scale_divisor)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be non-negative and finite, got {value}"
                )));
            }
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(value.is_finite() && (0.0..1.0).contains(&value)) {
                return Err(Error::Parameter(format!(
                    "{name} must lie in [0, 1), got {value}"
                )));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!(
                "clip gap fraction must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / self.lr_scale_divisor
    }
}

/// Parses `key = value` configuration text into a copy of `base` with the
/// listed keys replaced. Blank lines and `#` comments are ignored; unknown
/// keys and unparsable values are parameter errors naming the line.
pub fn parse_config(text: &str, base: &TrainConfig) -> Result<TrainConfig> {
    let mut config = base.clone();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parameter(format!(
                "config line {line_no}: expected `key = value`, got {line:?}"
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad_value = |what: &str| {
            Error::Parameter(format!(
                "config line {line_no}: cannot parse {value:?} as {what} for key {key:?}"
            ))
        };
        match key {
            "epochs" => config.epochs = value.parse().map_err(|_| bad_value("an integer"))?,
            "batch_size" => config.batch_size = value.parse().map_err(|_| bad_value("an integer"))?,
            "warmup_epochs" => {
                config.warmup_epochs = value.parse().map_err(|_| bad_value("an integer"))?
            }
            "seed" => config.seed = value.parse().map_err(|_| bad_value("an integer"))?,
            "base_lr" => config.base_lr = value.parse().map_err(|_| bad_value("a number"))?,
            "lr_scale_divisor" => {
                config.lr_scale_divisor = value.parse().map_err(|_| bad_value("a number"))?
            }
            "weight_decay" => {
                config.weight_decay = value.parse().map_err(|_| bad_value("a number"))?
            }
            "beta1" => config.beta1 = value.parse().map_err(|_| bad_value("a number"))?,
            "beta2" => config.beta2 = value.parse().map_err(|_| bad_value("a number"))?,
            "temperature" => {
                config.temperature = value.parse().map_err(|_| bad_value("a number"))?
            }
            "delta" => config.delta = value.parse().map_err(|_| bad_value("a number"))?,
            "lambda" => config.lambda = value.parse().map_err(|_| bad_value("a number"))?,
            "alpha" => config.alpha = value.parse().map_err(|_| bad_value("a number"))?,
            other => {
                return Err(Error::Parameter(format!(
                    "config line {line_no}: unknown key {other:?}"
                )))
            }
        }
    }
    Ok(config)
}

pub fn load_config<P: AsRef<Path>>(path: P, base: &TrainConfig) -> Result<TrainConfig> {
    parse_config(&std::fs::read_to_string(path)?, base)
}

/// Learning rate at `step` of `total` under linear warmup to `peak` over
/// `warmup` steps followed by cosine decay to zero.
///
/// Preconditions (programming errors, asserted): `warmup < total`,
/// `step <= total`, `peak` positive and finite.
pub fn lr_at(step: usize, total: usize, warmup: usize, peak: f64) -> f64 {
    assert!(warmup < total, "warmup ({warmup}) must be shorter than the schedule ({total})");
    assert!(step <= total, "step {step} beyond the schedule ({total})");
    assert!(peak.is_finite() && peak > 0.0, "peak learning rate must be positive");
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else {
        let progress = (step - warmup) as f64 / (total - warmup) as f64;
        peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// First and second moment estimates of AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// Per-step AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// One decoupled-weight-decay Adam update:
/// `theta -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * theta)`.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::Contract(format!(
            "optimizer length mismatch: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hyper.lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + hyper.weight_decay * params[i]);
    }
    Ok(())
}

/// Worker layout for batch processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Single,
    /// A fixed-size worker pool; 0 and 1 behave like `Single`.
    Threads(usize),
}

/// Loss and learning-rate record of one optimizer step, averaged over the
/// batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub cyc: f64,
    pub reg: f64,
    pub total: f64,
}

/// Trade-off metrics measured on the full corpus after an epoch; epoch 0 is
/// the freshly initialized head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub metrics: TradeoffMetrics,
}

/// Everything recorded over one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<EpochSnapshot>,
    /// Total round-trip diagonal clamps observed; nonzero values flag a
    /// collapsing head.
    pub clamped_entries: usize,
}

struct ItemOutcome {
    flat_grad: Vec<f64>,
    report: LossReport,
    clamped: usize,
}

fn process_item(
    head: &ProjectionParams,
    video: &VideoEmbeddingSequence,
    encoding: &PositionalGrid,
    config: &TrainConfig,
    seed: u64,
) -> Result<ItemOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = sample_pair(video, config.delta, &mut rng)?;
    let augmented = pea_augment(encoding, config.alpha, &mut rng)?;
    let x_f = encoding.apply_to(clip.forward)?;
    let x_m = encoding.apply_to(clip.intermediate)?;
    let x_b = augmented.apply_to(clip.backward)?;

    let (p_f, cache_f) = project_rows(head, x_f.values(), NormMode::LayerNorm)?;
    let (p_m, cache_m) = project_rows(head, x_m.values(), NormMode::LayerNorm)?;
    let (p_b, cache_b) = project_rows(head, x_b.values(), NormMode::LayerNorm)?;

    let loss = total_loss(
        [&p_f, &p_m, &p_b],
        [x_f.values(), x_m.values(), x_b.values()],
        config.lambda,
        config.temperature,
    )?;
    if !loss.report.total.is_finite() {
        return Err(Error::Numeric(format!(
            "clip loss became non-finite ({})",
            loss.report.total
        )));
    }

    let g_f = project_backward(head, &cache_f, &loss.d_forward)?;
    let g_m = project_backward(head, &cache_m, &loss.d_intermediate)?;
    let g_b = project_backward(head, &cache_b, &loss.d_backward)?;
    let mut grads = g_f.params;
    grads.add_assign(&g_m.params)?;
    grads.add_assign(&g_b.params)?;

    Ok(ItemOutcome {
        flat_grad: grads.to_flat(),
        report: loss.report,
        clamped: loss.clamped_entries,
    })
}

/// Trains a linear head on the corpus and reports the history. Returns the
/// trained parameters alongside per-step loss records and per-epoch
/// trade-off snapshots (epoch 0 included).
pub fn train(
    corpus: &[VideoEmbeddingSequence],
    config: &TrainConfig,
    parallelism: Parallelism,
) -> Result<(ProjectionParams, TrainHistory)> {
    config.validate()?;
    let shape = corpus_shape(corpus)?;
    if shape.videos < 2 {
        return Err(Error::Parameter(format!(
            "training needs at least two videos, got {}",
            shape.videos
        )));
    }
    if shape.dim < 4 || shape.dim % 2 != 0 {
        return Err(Error::Parameter(format!(
            "training needs an even feature dimension of at least 4 for the positional encoding, got {}",
            shape.dim
        )));
    }
    let encoding = sinusoidal_grid(shape.n_h, shape.n_w, shape.dim)?;

    let pool = match parallelism {
        Parallelism::Single | Parallelism::Threads(0) | Parallelism::Threads(1) => None,
        Parallelism::Threads(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))?,
        ),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = init_linear(shape.dim, &mut rng);
    let mut opt = OptimizerState::new(head.n_trainable());

    let batches_per_epoch = shape.videos.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let warmup_steps = config.warmup_epochs * batches_per_epoch;
    let peak = config.peak_lr();
    let eval_options = EvalOptions {
        delta: config.delta,
        temperature: config.temperature,
        gamma: DEFAULT_GAMMA,
    };

    let mut history = TrainHistory {
        steps: Vec::with_capacity(total_steps),
        snapshots: Vec::with_capacity(config.epochs + 1),
        clamped_entries: 0,
    };
    history.snapshots.push(EpochSnapshot {
        epoch: 0,
        metrics: evaluate_tradeoff(corpus, Some(&head), &eval_options)?.0,
    });

    let mut step = 0usize;
    let mut order: Vec<usize> = (0..shape.videos).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let items: Vec<(usize, u64)> =
                batch.iter().map(|&video| (video, rng.random::<u64>())).collect();

            let head_ref = &head;
            let encoding_ref = &encoding;
            let work = |&(video, seed): &(usize, u64)| {
                process_item(head_ref, &corpus[video], encoding_ref, config, seed)
            };
            let outcomes: Vec<Result<ItemOutcome>> = match &pool {
                Some(p) => p.install(|| items.par_iter().map(work).collect()),
                None => items.iter().map(work).collect(),
            };

            let mut mean_grad = vec![0.0; head.n_trainable()];
            let mut mean = LossReport { cyc: 0.0, reg: 0.0, total: 0.0, lambda: config.lambda };
            let scale = 1.0 / items.len() as f64;
            for outcome in outcomes {
                let outcome = outcome
                    .map_err(|e| Error::Numeric(format!("optimization step {step}: {e}")))?;
                for (acc, g) in mean_grad.iter_mut().zip(&outcome.flat_grad) {
                    *acc += scale * g;
                }
                mean.cyc += scale * outcome.report.cyc;
                mean.reg += scale * outcome.report.reg;
                mean.total += scale * outcome.report.total;
                history.clamped_entries += outcome.clamped;
            }
            if mean_grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "optimization step {step}: gradient became non-finite"
                )));
            }

            let lr = lr_at(step, total_steps, warmup_steps, peak);
            let hyper = AdamHyper {
                lr,
                weight_decay: config.weight_decay,
                beta1: config.beta1,
                beta2: config.beta2,
            };
            let mut flat = head.trainable_flat();
            adamw_step(&mut flat, &mean_grad, &mut opt, &hyper)?;
            head.set_trainable_flat(&flat)?;

            history.steps.push(StepRecord {
                step,
                lr,
                cyc: mean.cyc,
                reg: mean.reg,
                total: mean.total,
            });
            step += 1;
        }
        history.snapshots.push(EpochSnapshot {
            epoch: epoch + 1,
            metrics: evaluate_tradeoff(corpus, Some(&head), &eval_options)?.0,
        });
    }

    Ok((head, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, SyntheticModelSpec};
    use crate::numerics::DenseMatrix;
    use approx::assert_relative_eq;

    #[test]
    fn adamw_first_step_moves_by_learning_rate() {
        let mut params = vec![1.0];
        let mut state = OptimizerState::new(1);
        let hyper = AdamHyper { lr: 0.1, weight_decay: 0.0, beta1: 0.9, beta2: 0.95 };
        adamw_step(&mut params, &[1.0], &mut state, &hyper).unwrap();
        // mhat = vhat = 1 regardless of betas, so the step is lr/(1 + eps).
        assert_relative_eq!(params[0], 1.0 - 0.1 / (1.0 + ADAM_EPS), epsilon = 1e-16);
        assert_relative_eq!(params[0], 0.9, epsilon = 1e-8);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adamw_zero_gradient_applies_pure_decay() {
        let mut params = vec![2.0];
        let mut state = OptimizerState::new(1);
        let hyper = AdamHyper { lr: 0.1, weight_decay: 0.05, beta1: 0.9, beta2: 0.95 };
        adamw_step(&mut params, &[0.0], &mut state, &hyper).unwrap();
        assert_eq!(params[0], 2.0 * (1.0 - 0.1 * 0.05));
    }

    #[test]
    fn adamw_constant_gradient_keeps_unit_ratio() {
        // With constant gradients the bias-corrected ratio stays at
        // sign(g), so two steps move two learning rates.
        let mut params = vec![1.0];
        let mut state = OptimizerState::new(1);
        let hyper = AdamHyper { lr: 0.01, weight_decay: 0.0, beta1: 0.9, beta2: 0.95 };
        adamw_step(&mut params, &[2.0], &mut state, &hyper).unwrap();
        adamw_step(&mut params, &[2.0], &mut state, &hyper).unwrap();
        assert_relative_eq!(params[0], 1.0 - 0.02, epsilon = 1e-9);
    }

    #[test]
    fn adamw_rejects_length_mismatch() {
        let mut params = vec![0.0; 2];
        let mut state = OptimizerState::new(2);
        let hyper = AdamHyper { lr: 0.1, weight_decay: 0.0, beta1: 0.9, beta2: 0.95 };
        assert!(matches!(
            adamw_step(&mut params, &[1.0], &mut state, &hyper),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn lr_schedule_fixture_points() {
        assert_eq!(lr_at(0, 100, 10, 1.0), 0.0);
        assert_relative_eq!(lr_at(5, 100, 10, 1.0), 0.5, epsilon = 1e-15);
        assert_eq!(lr_at(10, 100, 10, 1.0), 1.0);
        // Halfway through decay: cos(pi/2) = 0.
        assert_relative_eq!(lr_at(55, 100, 10, 1.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(lr_at(100, 100, 10, 1.0), 0.0, epsilon = 1e-12);
        // No warmup starts at the peak.
        assert_eq!(lr_at(0, 100, 0, 2.0), 2.0);
    }

    #[test]
    #[should_panic(expected = "beyond the schedule")]
    fn lr_schedule_rejects_step_past_total() {
        lr_at(101, 100, 10, 1.0);
    }

    #[test]
    #[should_panic(expected = "warmup")]
    fn lr_schedule_rejects_warmup_at_total() {
        lr_at(0, 100, 100, 1.0);
    }

    #[test]
    fn config_parsing_overrides_and_reports_lines() {
        let base = TrainConfig::default();
        let text = "\n# comment\nepochs = 7\n  lambda=2.5  \nseed = 9\n";
        let parsed = parse_config(text, &base).unwrap();
        assert_eq!(parsed.epochs, 7);
        assert_eq!(parsed.lambda, 2.5);
        assert_eq!(parsed.seed, 9);
        assert_eq!(parsed.batch_size, base.batch_size);

        let err = parse_config("epochs = 1\nwat = 3\n", &base).unwrap_err();
        match err {
            Error::Parameter(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("expected a parameter error, got {other:?}"),
        }
        let err = parse_config("epochs = soon", &base).unwrap_err();
        match err {
            Error::Parameter(msg) => assert!(msg.contains("line 1"), "{msg}"),
            other => panic!("expected a parameter error, got {other:?}"),
        }
        assert!(parse_config("epochs 3", &base).is_err());
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { warmup_epochs: 5, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { delta: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { lambda: -0.1, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { base_lr: 0.0, ..ok.clone() }.validate().is_err());
        assert_relative_eq!(ok.peak_lr(), 1e-4 * 32.0 / 256.0, epsilon = 1e-18);
    }

    fn tiny_corpus(seed: u64) -> Vec<VideoEmbeddingSequence> {
        let spec = SyntheticModelSpec {
            dim: 4,
            n_h: 2,
            n_w: 2,
            frames_per_video: 3,
            videos: 4,
            intra_cov: DenseMatrix::identity(4).scaled(0.5),
            inter_cov: DenseMatrix::identity(4),
            seed,
        };
        generate_corpus(&spec).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            warmup_epochs: 1,
            base_lr: 0.01,
            lr_scale_divisor: 2.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn train_produces_consistent_history() {
        let corpus = tiny_corpus(1);
        let config = tiny_config();
        let (head, history) = train(&corpus, &config, Parallelism::Single).unwrap();
        assert!(head.is_finite());
        // 4 videos / batch 2 = 2 batches per epoch, 2 epochs.
        assert_eq!(history.steps.len(), 4);
        assert_eq!(history.snapshots.len(), 3);
        assert_eq!(history.snapshots[0].epoch, 0);
        assert_eq!(history.snapshots[2].epoch, 2);
        for (i, record) in history.steps.iter().enumerate() {
            assert_eq!(record.step, i);
            assert_relative_eq!(record.lr, lr_at(i, 4, 2, config.peak_lr()), epsilon = 1e-18);
            assert!(record.total.is_finite());
            assert!(record.reg >= 0.0);
            assert!((record.total - (record.cyc + config.lambda * record.reg)).abs() < 1e-12);
        }
    }

    #[test]
    fn train_is_deterministic_and_thread_invariant() {
        let corpus = tiny_corpus(2);
        let config = tiny_config();
        let (head_a, hist_a) = train(&corpus, &config, Parallelism::Single).unwrap();
        let (head_b, hist_b) = train(&corpus, &config, Parallelism::Single).unwrap();
        assert_eq!(head_a, head_b);
        assert_eq!(hist_a, hist_b);
        let (head_c, hist_c) = train(&corpus, &config, Parallelism::Threads(3)).unwrap();
        assert_eq!(head_a, head_c);
        assert_eq!(hist_a, hist_c);
        let (head_d, _) = train(&corpus, &config, Parallelism::Threads(1)).unwrap();
        assert_eq!(head_a, head_d);
    }

    #[test]
    fn train_seed_and_lambda_matter() {
        let corpus = tiny_corpus(3);
        let config = tiny_config();
        let (head_a, _) = train(&corpus, &config, Parallelism::Single).unwrap();
        let (head_b, _) =
            train(&corpus, &TrainConfig { seed: 1, ..config.clone() }, Parallelism::Single).unwrap();
        assert_ne!(head_a, head_b);
        let (head_c, _) =
            train(&corpus, &TrainConfig { lambda: 0.0, ..config }, Parallelism::Single).unwrap();
        assert_ne!(head_a, head_c);
    }

    #[test]
    fn train_rejects_bad_corpora() {
        let config = tiny_config();
        let corpus = tiny_corpus(4);
        assert!(matches!(
            train(&corpus[..1], &config, Parallelism::Single),
            Err(Error::Parameter(_))
        ));
        let odd_spec = SyntheticModelSpec {
            dim: 5,
            n_h: 2,
            n_w: 2,
            frames_per_video: 3,
            videos: 4,
            intra_cov: DenseMatrix::identity(5),
            inter_cov: DenseMatrix::identity(5),
            seed: 0,
        };
        let odd = generate_corpus(&odd_spec).unwrap();
        assert!(matches!(
            train(&odd, &config, Parallelism::Single),
            Err(Error::Parameter(_))
        ));
    }
}
