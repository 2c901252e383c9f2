//! Generation for the four model families, with NFE accounting and an
//! analytic FLOP cost model.
//!
//! Cost model: one denoiser evaluation over a full sequence costs `2N·L`
//! FLOPs for a model with `N` parameters. Without caching every evaluation
//! pays that price. With caching (available when visibility is causal, so
//! already-decoded positions never attend to later ones) a step pays `2N` only
//! for the positions it processes for the first time; over a whole AR or
//! block-sampler run those counts telescope to `L`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::{argmax, sample_unchecked};
use crate::denoisers::{Denoiser, VisibilitySpec};
use crate::error::{Error, Result};
use crate::processes::{masked_posterior_mixture, uniform_posterior_mixture, PosteriorParams};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::vocab::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerFamily {
    Ar,
    AncestralMasked,
    AncestralUniform,
    EsoBlock,
}

impl SamplerFamily {
    /// Whether decoded positions can be cached.
    pub fn cacheable(self) -> bool {
        matches!(self, SamplerFamily::Ar | SamplerFamily::EsoBlock)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub family: SamplerFamily,
    /// Diffusion discretization `T` for ancestral samplers.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Block spacing `L'` for the Eso block sampler.
    #[serde(default)]
    pub block_spacing: Option<usize>,
    /// Substitute a hard draw from `x_θ` instead of the full distribution in
    /// the masked posterior.
    #[serde(default)]
    pub hard_sample: bool,
    /// Always decode the most probable token (AR and block samplers).
    #[serde(default)]
    pub greedy: bool,
    #[serde(default)]
    pub schedule: Option<NoiseSchedule>,
}

fn default_steps() -> usize {
    64
}

impl SamplerConfig {
    pub fn new(family: SamplerFamily) -> Self {
        Self {
            family,
            steps: default_steps(),
            block_spacing: None,
            hard_sample: false,
            greedy: false,
            schedule: None,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_block_spacing(mut self, l_prime: usize) -> Self {
        self.block_spacing = Some(l_prime);
        self
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler: steps must be ≥ 1".into()));
        }
        if self.family == SamplerFamily::EsoBlock {
            let lp = self
                .block_spacing
                .ok_or_else(|| Error::Config("eso_block sampler needs block_spacing".into()))?;
            if lp == 0 || len % lp != 0 {
                return Err(Error::Config(format!(
                    "block spacing L' = {lp} must divide the sequence length L = {len}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationTrace {
    pub sample: TokenSequence,
    /// Denoiser evaluations.
    pub nfe: usize,
    /// FLOPs under the cost model (cached where the family allows it).
    pub modeled_cost: f64,
    /// Positions decoded (masked, block, AR) or changed (uniform) per step.
    pub per_step_unmask_sets: Vec<Vec<usize>>,
    /// Positions evaluated for the first time at each denoiser call.
    pub new_positions_per_call: Vec<usize>,
}

/// Modeled FLOPs of a trace for a model with `n_params` parameters.
pub fn modeled_cost(trace: &GenerationTrace, n_params: f64, family: SamplerFamily, cache: bool) -> f64 {
    let len = trace.sample.len() as f64;
    if cache && family.cacheable() {
        trace.new_positions_per_call.iter().map(|&n| 2.0 * n_params * n as f64).sum()
    } else {
        trace.nfe as f64 * 2.0 * n_params * len
    }
}

fn placeholder(model: &dyn Denoiser) -> usize {
    model.vocab().mask().unwrap_or(0)
}

fn draw(probs: &[f64], greedy: bool, rng: &mut RngStream) -> usize {
    if greedy {
        argmax(probs)
    } else {
        sample_unchecked(probs, rng)
    }
}

fn finish(model: &dyn Denoiser, family: SamplerFamily, tokens: Vec<usize>, nfe: usize, sets: Vec<Vec<usize>>, new: Vec<usize>) -> GenerationTrace {
    let mut trace = GenerationTrace {
        sample: TokenSequence::from_parts_unchecked(tokens, model.vocab()),
        nfe,
        modeled_cost: 0.0,
        per_step_unmask_sets: sets,
        new_positions_per_call: new,
    };
    trace.modeled_cost = modeled_cost(&trace, model.param_count() as f64, family, true);
    trace
}

/// Left-to-right generation: `L` strict-causal evaluations, time input zero.
pub fn sample_ar(model: &dyn Denoiser, greedy: bool, rng: &mut RngStream) -> Result<GenerationTrace> {
    let len = model.seq_len();
    let mut tokens = vec![placeholder(model); len];
    let vis = VisibilitySpec::causal();
    let mut sets = Vec::with_capacity(len);
    for l in 0..len {
        let z = TokenSequence::from_parts_unchecked(tokens.clone(), model.vocab());
        let field = model.predict(&z, 0.0, &vis)?;
        tokens[l] = draw(field.row(l), greedy, rng);
        sets.push(vec![l]);
    }
    Ok(finish(model, SamplerFamily::Ar, tokens, len, sets, vec![1; len]))
}

/// Ancestral sampling on the grid `t_i = i / T`, `i = T, …, 1`.
///
/// Masked family: starts all-mask; each masked position moves to the
/// posterior with `x` replaced by the predicted distribution (or a hard draw
/// from it). Predictions are reused while no token changes, since the masked
/// denoiser's time input is zeroed. Any mask left at the end is decoded from
/// the last prediction.
///
/// Uniform family: starts from i.i.d. uniform tokens and redraws every
/// position from the uniform-state posterior at every step.
pub fn sample_ancestral(
    model: &dyn Denoiser,
    schedule: NoiseSchedule,
    steps: usize,
    uniform: bool,
    hard_sample: bool,
    rng: &mut RngStream,
) -> Result<GenerationTrace> {
    let len = model.seq_len();
    let vocab = model.vocab();
    let k = vocab.size();
    let vis = VisibilitySpec::bidirectional();
    let mut sets = Vec::with_capacity(steps);
    let mut nfe = 0;
    if uniform {
        if vocab.mask().is_some() {
            return Err(Error::Config("uniform-state sampling needs a vocabulary without a mask".into()));
        }
        let mut tokens: Vec<usize> = (0..len).map(|_| rng.below(k as u64) as usize).collect();
        for i in (1..=steps).rev() {
            let t = i as f64 / steps as f64;
            let s = (i - 1) as f64 / steps as f64;
            let params = PosteriorParams::new(schedule.alpha(s), schedule.alpha(t), k)?;
            let z = TokenSequence::from_parts_unchecked(tokens.clone(), vocab);
            let field = model.predict(&z, t, &vis)?;
            nfe += 1;
            let mut changed = Vec::new();
            for (l, tok) in tokens.iter_mut().enumerate() {
                let post = uniform_posterior_mixture(*tok, field.row(l), &params)?;
                let new = sample_unchecked(&post, rng);
                if new != *tok {
                    changed.push(l);
                }
                *tok = new;
            }
            sets.push(changed);
        }
        let calls = vec![len; nfe];
        return Ok(finish(model, SamplerFamily::AncestralUniform, tokens, nfe, sets, calls));
    }

    let mask = vocab
        .mask()
        .ok_or_else(|| Error::Config("masked sampling needs a vocabulary with a mask".into()))?;
    let mut tokens = vec![mask; len];
    let mut field = None;
    for i in (1..=steps).rev() {
        let t = i as f64 / steps as f64;
        let s = (i - 1) as f64 / steps as f64;
        let params = PosteriorParams::new(schedule.alpha(s), schedule.alpha(t), k)?;
        if field.is_none() {
            let z = TokenSequence::from_parts_unchecked(tokens.clone(), vocab);
            field = Some(model.predict(&z, t, &vis)?);
            nfe += 1;
        }
        let f = field.as_ref().unwrap();
        let mut decoded = Vec::new();
        for (l, tok) in tokens.iter_mut().enumerate() {
            if *tok != mask {
                continue;
            }
            let post = if hard_sample {
                let mut one_hot = vec![0.0; k];
                one_hot[sample_unchecked(f.row(l), rng)] = 1.0;
                masked_posterior_mixture(mask, &one_hot, &params, vocab)?
            } else {
                masked_posterior_mixture(mask, f.row(l), &params, vocab)?
            };
            let new = sample_unchecked(&post, rng);
            if new != mask {
                *tok = new;
                decoded.push(l);
            }
        }
        if !decoded.is_empty() {
            field = None;
        }
        sets.push(decoded);
    }
    let residual: Vec<usize> = (0..len).filter(|&l| tokens[l] == mask).collect();
    if !residual.is_empty() {
        let f = match field {
            Some(f) => f,
            None => {
                nfe += 1;
                let z = TokenSequence::from_parts_unchecked(tokens.clone(), vocab);
                model.predict(&z, 0.0, &vis)?
            }
        };
        for &l in &residual {
            tokens[l] = sample_unchecked(f.row(l), rng);
        }
        sets.push(residual);
    }
    let calls = vec![len; nfe];
    Ok(finish(model, SamplerFamily::AncestralMasked, tokens, nfe, sets, calls))
}

/// Positions decoded at each block-sampler step: step `i` takes
/// `{i, i + L', …, i + (k − 1)L'}` with `k = L / L'`.
pub fn eso_block_schedule(len: usize, block_spacing: usize) -> Result<Vec<Vec<usize>>> {
    if block_spacing == 0 || len % block_spacing != 0 {
        return Err(Error::Config(format!(
            "block spacing L' = {block_spacing} must divide the sequence length L = {len}"
        )));
    }
    let k = len / block_spacing;
    Ok((0..block_spacing)
        .map(|i| (0..k).map(|j| i + j * block_spacing).collect())
        .collect())
}

/// Eso-LM block sampler: `L'` steps, each decoding `L / L'` far-apart
/// positions in parallel under permuted-causal visibility following the
/// decode order, so every step only adds new positions to the cache.
pub fn sample_eso_block(
    model: &dyn Denoiser,
    block_spacing: usize,
    greedy: bool,
    rng: &mut RngStream,
) -> Result<GenerationTrace> {
    let len = model.seq_len();
    let sets = eso_block_schedule(len, block_spacing)?;
    let order: Vec<usize> = sets.iter().flatten().copied().collect();
    let vis = VisibilitySpec::permuted(&order)?;
    let mut tokens = vec![placeholder(model); len];
    for (i, set) in sets.iter().enumerate() {
        let t = (block_spacing - i) as f64 / block_spacing as f64;
        let z = TokenSequence::from_parts_unchecked(tokens.clone(), model.vocab());
        let field = model.predict(&z, t, &vis)?;
        for &l in set {
            tokens[l] = draw(field.row(l), greedy, rng);
        }
    }
    let new = sets.iter().map(Vec::len).collect();
    Ok(finish(model, SamplerFamily::EsoBlock, tokens, block_spacing, sets, new))
}

/// Dispatch on `config.family`.
pub fn generate(model: &dyn Denoiser, config: &SamplerConfig, rng: &mut RngStream) -> Result<GenerationTrace> {
    config.validate(model.seq_len())?;
    let schedule = config.schedule.unwrap_or(NoiseSchedule::Linear);
    match config.family {
        SamplerFamily::Ar => sample_ar(model, config.greedy, rng),
        SamplerFamily::AncestralMasked => sample_ancestral(model, schedule, config.steps, false, config.hard_sample, rng),
        SamplerFamily::AncestralUniform => sample_ancestral(model, schedule, config.steps, true, false, rng),
        SamplerFamily::EsoBlock => sample_eso_block(model, config.block_spacing.unwrap(), config.greedy, rng),
    }
}

/// `count` independent traces; trace `i` uses `RngStream::new(seed).split(i)`.
pub fn generate_many(model: &dyn Denoiser, config: &SamplerConfig, count: usize, seed: u64) -> Result<Vec<GenerationTrace>> {
    config.validate(model.seq_len())?;
    let root = RngStream::new(seed);
    (0..count)
        .into_par_iter()
        .map(|i| generate(model, config, &mut root.split(i as u64)))
        .collect()
}

/// Line-delimited JSON record of one trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tokens: Vec<usize>,
    pub nfe: usize,
    pub modeled_cost: f64,
    pub steps: Vec<Vec<usize>>,
}

impl From<&GenerationTrace> for TraceRecord {
    fn from(t: &GenerationTrace) -> Self {
        Self {
            tokens: t.sample.tokens().to_vec(),
            nfe: t.nfe,
            modeled_cost: t.modeled_cost,
            steps: t.per_step_unmask_sets.clone(),
        }
    }
}

/// Write one JSON object per line.
pub fn write_traces(path: impl AsRef<Path>, traces: &[GenerationTrace]) -> Result<()> {
    let mut buf = Vec::new();
    for t in traces {
        serde_json::to_writer(&mut buf, &TraceRecord::from(t)).map_err(|e| Error::Format(e.to_string()))?;
        buf.write_all(b"\n").expect("writing to memory");
    }
    crate::io::write_atomic(path, &buf)
}
