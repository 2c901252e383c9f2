//! Likelihood bounds, generative perplexity and sample diversity.
//!
//! Generative perplexity is measured under the exact synthetic language that
//! produced the training data, which stands in for a large pretrained
//! evaluator model; every report carries that note in its header.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::entropy;
use crate::denoisers::Denoiser;
use crate::error::{Error, Result};
use crate::objectives::{ar_nll, ObjectiveKind, ObjectiveSpec};
use crate::rng::RngStream;
use crate::training::SyntheticLanguage;
use crate::vocab::TokenSequence;

/// Header line written into every evaluation report.
pub const EVALUATOR_NOTE: &str =
    "generative perplexity is computed under the exact synthetic language (desk-scale evaluator substitution)";

/// Compensated (Neumaier) summation.
pub fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelboEstimate {
    pub per_token: f64,
    pub standard_error: f64,
    /// Independent Monte Carlo units (antithetic pairs count once).
    pub units: usize,
}

/// Monte Carlo estimate of a bound over `dataset`, in nats per token.
///
/// Each sequence gets `mc_draws` diffusion times from the objective's range
/// (antithetic pairs if enabled); diffusion terms are weighted by the range
/// width so the estimate targets the bound integrated over that range. Randomness for
/// sequence `i` comes from `RngStream::new(seed).split(i)`. The AR objective
/// is exact and reports a zero standard error.
pub fn eval_nelbo(
    model: &dyn Denoiser,
    spec: &ObjectiveSpec,
    dataset: &[TokenSequence],
    mc_draws: usize,
    seed: u64,
) -> Result<NelboEstimate> {
    if !spec.kind.is_bound() {
        return Err(Error::Config(
            "the low-variance loss is a training objective, not a likelihood bound".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Validation("empty evaluation dataset".into()));
    }
    let len = model.seq_len() as f64;
    if spec.kind == ObjectiveKind::Ar {
        let vals: Vec<f64> = dataset
            .par_iter()
            .map(|x| ar_nll(model, x))
            .collect::<Result<_>>()?;
        return Ok(NelboEstimate {
            per_token: stable_sum(vals) / (dataset.len() as f64 * len),
            standard_error: 0.0,
            units: dataset.len(),
        });
    }
    if mc_draws == 0 {
        return Err(Error::Config("mc_draws must be positive".into()));
    }
    let root = RngStream::new(seed);
    let group = if spec.antithetic { 2 } else { 1 };
    let units: Vec<Vec<f64>> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = root.split(i as u64);
            let ts = spec.draw_times(mc_draws, &mut rng);
            let vals = ts
                .iter()
                .map(|&t| Ok(spec.sample(model, x, t, &mut rng)?.estimate / len))
                .collect::<Result<Vec<f64>>>()?;
            Ok(vals.chunks(group).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect())
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = units.into_iter().flatten().collect();
    let n = flat.len() as f64;
    let mean = stable_sum(flat.iter().copied()) / n;
    let var = if flat.len() > 1 {
        stable_sum(flat.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0)
    } else {
        0.0
    };
    Ok(NelboEstimate {
        per_token: mean,
        standard_error: (var / n).sqrt(),
        units: flat.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenPpl {
    pub value: f64,
    /// Samples with zero probability under the evaluator (left out).
    pub excluded: usize,
}

/// `exp(−Σ log p(x) / Σ L)` over the samples the evaluator supports.
pub fn gen_ppl(samples: &[TokenSequence], evaluator: &SyntheticLanguage) -> Result<GenPpl> {
    if samples.is_empty() {
        return Err(Error::Validation("generative perplexity of an empty sample set".into()));
    }
    let lps: Vec<f64> = samples.iter().map(|s| evaluator.log_prob(s.tokens())).collect();
    let kept: Vec<(f64, usize)> = lps
        .iter()
        .zip(samples)
        .filter(|(lp, _)| lp.is_finite())
        .map(|(&lp, s)| (lp, s.len()))
        .collect();
    let excluded = samples.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::Validation(format!(
            "all {excluded} samples have zero probability under the evaluator"
        )));
    }
    let tokens: usize = kept.iter().map(|k| k.1).sum();
    let total = stable_sum(kept.iter().map(|k| k.0));
    Ok(GenPpl {
        value: (-total / tokens as f64).exp(),
        excluded,
    })
}

/// Entropy of the empirical token distribution within one sequence.
pub fn sequence_entropy(seq: &TokenSequence) -> f64 {
    let mut counts = vec![0usize; seq.vocab().size()];
    for &t in seq.tokens() {
        counts[t] += 1;
    }
    let n = seq.len() as f64;
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    entropy(&p)
}

/// Mean within-sequence entropy over samples, nats.
pub fn mean_sequence_entropy(samples: &[TokenSequence]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation("entropy of an empty sample set".into()));
    }
    Ok(stable_sum(samples.iter().map(sequence_entropy)) / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub evaluator: String,
    pub objective: ObjectiveKind,
    pub nelbo_per_token: f64,
    pub perplexity: f64,
    pub mc_standard_error: f64,
    pub gen_ppl: f64,
    pub excluded_samples: usize,
    pub mean_entropy: f64,
    pub sample_count: usize,
    pub mean_nfe: f64,
    pub mean_modeled_cost: f64,
}

impl EvalReport {
    pub fn new(objective: ObjectiveKind, nelbo: NelboEstimate, samples: &[TokenSequence], language: &SyntheticLanguage) -> Result<Self> {
        let g = gen_ppl(samples, language)?;
        Ok(Self {
            evaluator: EVALUATOR_NOTE.into(),
            objective,
            nelbo_per_token: nelbo.per_token,
            perplexity: nelbo.per_token.exp(),
            mc_standard_error: nelbo.standard_error,
            gen_ppl: g.value,
            excluded_samples: g.excluded,
            mean_entropy: mean_sequence_entropy(samples)?,
            sample_count: samples.len(),
            mean_nfe: 0.0,
            mean_modeled_cost: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocab;

    #[test]
    fn entropy_extremes() {
        let v = Vocab::without_mask(4).unwrap();
        let constant = TokenSequence::new(vec![2; 8], v).unwrap();
        let cycle = TokenSequence::new(vec![0, 1, 2, 3, 0, 1, 2, 3], v).unwrap();
        assert_eq!(sequence_entropy(&constant), 0.0);
        assert!((sequence_entropy(&cycle) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_samples_rejected() {
        let lang = SyntheticLanguage::two_state(0.9, 3).unwrap();
        assert!(gen_ppl(&[], &lang).is_err());
        assert!(mean_sequence_entropy(&[]).is_err());
    }

    #[test]
    fn stable_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(stable_sum(vals), 2.0);
    }
}
