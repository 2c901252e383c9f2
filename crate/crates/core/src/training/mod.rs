//! Synthetic data, AdamW, learning-rate schedules and the training loop.

mod language;
mod optim;

pub use language::{stationary_distribution, LanguageKind, SyntheticLanguage, ENUMERATION_LIMIT};
pub use optim::{adamw_step, AdamWConfig, LrSchedule, OptimizerState};

use serde::{Deserialize, Serialize};

use crate::denoisers::{Denoiser, Differentiable, Model};
use crate::error::{Error, Result};
use crate::objectives::{loss_gradient, BatchGradient, ObjectiveKind, ObjectiveSpec};
use crate::rng::RngStream;
use crate::vocab::TokenSequence;

/// Stream indices split off the run seed. Model initialization uses
/// [`STREAM_INIT`]; each training step `s` uses `split(s)` of the others.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_DATA: u64 = 1;
pub const STREAM_TIMES: u64 = 2;
pub const STREAM_NOISE: u64 = 3;

/// Consecutive steps above the divergence threshold that abort training.
pub const DIVERGENCE_PATIENCE: usize = 50;
/// Loss multiple of the first step's loss counted as divergent.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    /// Defaults to a cosine schedule over `steps`.
    #[serde(default)]
    pub lr: Option<LrSchedule>,
    /// Clip the global gradient norm to this value (off by default).
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Fraction of sequences cut to a random length.
    #[serde(default)]
    pub random_length_fraction: f64,
    /// Overridden by the experiment seed when run from a config file.
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    64
}

impl TrainConfig {
    pub fn new(steps: u64, batch_size: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            optimizer: AdamWConfig::default(),
            lr: None,
            grad_clip: None,
            random_length_fraction: 0.0,
            seed,
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        self.lr.unwrap_or_else(|| LrSchedule::default_cosine(self.steps))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: steps and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.random_length_fraction) {
            return Err(Error::Config("train: random_length_fraction must be in [0, 1]".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("train: grad_clip must be positive".into()));
            }
        }
        self.lr_schedule().validate()
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    /// Minibatch estimate in nats per token.
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Cumulative non-padding tokens.
    pub tokens: u64,
    /// Cumulative training FLOPs.
    pub flops: f64,
}

/// Denoiser evaluations per training example.
pub fn passes_per_example(spec: &ObjectiveSpec) -> usize {
    match (spec.kind, spec.eso) {
        (ObjectiveKind::Eso, Some(e)) if e.alpha_0 < 1.0 && e.alpha_0 > 0.0 => 2,
        _ => 1,
    }
}

/// Training FLOPs of one sequence: forward plus a backward pass counted as
/// twice the forward.
pub fn training_flops_per_sequence(forward_flops: f64, spec: &ObjectiveSpec) -> f64 {
    3.0 * forward_flops * passes_per_example(spec) as f64
}

/// Draw one minibatch; returns the sequences and their unpadded token count.
pub fn sample_batch(
    language: &SyntheticLanguage,
    vocab: crate::vocab::Vocab,
    batch: usize,
    random_length_fraction: f64,
    rng: &mut RngStream,
) -> Result<(Vec<TokenSequence>, u64)> {
    let mut seqs = Vec::with_capacity(batch);
    let mut tokens = 0u64;
    for _ in 0..batch {
        let (s, len) = language.sample_with_random_length(vocab, random_length_fraction, rng)?;
        tokens += len as u64;
        seqs.push(s);
    }
    Ok((seqs, tokens))
}

/// Run `config.steps` optimizer steps. Deterministic given the seed: step `s`
/// draws its data, times and noise from `split(s)` of dedicated streams.
///
/// `on_step` sees each metrics row as it is produced (use it to stream the
/// log); the full log is also returned.
pub fn train(
    objective: &ObjectiveSpec,
    model: &mut Model,
    language: &SyntheticLanguage,
    config: &TrainConfig,
    mut on_step: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    objective.validate()?;
    language.check_vocab(model.vocab())?;
    if language.seq_len() != model.seq_len() {
        return Err(Error::Mismatch(format!(
            "language length {} but model length {}",
            language.seq_len(),
            model.seq_len()
        )));
    }
    let root = RngStream::new(config.seed);
    let (data, times, noise) = (root.split(STREAM_DATA), root.split(STREAM_TIMES), root.split(STREAM_NOISE));
    let schedule = config.lr_schedule();
    let mut state = OptimizerState::new(config.optimizer, model.params().len());
    let step_flops = training_flops_per_sequence(model.forward_flops(), objective) * config.batch_size as f64;

    let mut log = Vec::with_capacity(config.steps as usize);
    let mut tokens = 0u64;
    let mut flops = 0.0;
    let mut initial = None;
    let mut above = 0usize;
    for step in 0..config.steps {
        let (batch, batch_tokens) = sample_batch(
            language,
            model.vocab(),
            config.batch_size,
            config.random_length_fraction,
            &mut data.split(step),
        )?;
        let ts = objective.draw_times(config.batch_size, &mut times.split(step));
        let BatchGradient { loss_per_token, mut grad } = loss_gradient(objective, model, &batch, &ts, &noise.split(step))?;
        if !loss_per_token.is_finite() {
            return Err(Error::numerical(format!("non-finite loss at step {step}"), None));
        }
        let mut norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if let Some(c) = config.grad_clip {
            if norm > c {
                grad.iter_mut().for_each(|g| *g *= c / norm);
                norm = c;
            }
        }
        let lr = schedule.lr_at(step);
        adamw_step(model.params_mut(), &grad, &mut state, lr)?;
        tokens += batch_tokens;
        flops += step_flops;

        let first = *initial.get_or_insert(loss_per_token);
        if loss_per_token > DIVERGENCE_FACTOR * first.abs() {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(Error::numerical(
                    format!(
                        "training diverged: loss {loss_per_token:.4} exceeded {DIVERGENCE_FACTOR}× the initial {first:.4} \
                         for {DIVERGENCE_PATIENCE} consecutive steps (step {step}, lr {lr:.3e}, grad norm {norm:.3e})"
                    ),
                    None,
                ));
            }
        } else {
            above = 0;
        }
        let row = MetricsRow {
            step,
            loss: loss_per_token,
            lr,
            grad_norm: norm,
            tokens,
            flops,
        };
        on_step(&row)?;
        log.push(row);
    }
    Ok(log)
}

/// Simple moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
