//! Interpolating forward kernels `q_t(z | x) = Cat(α_t x + (1 − α_t) π)` and
//! their exact reverse posteriors.
//!
//! Two priors are supported: the absorbing mask (`π = m`) and the uniform
//! categorical (`π = 1/K`). The two-step transition used by the posteriors is
//! `q_{t|s}(z_t | z_s) = Cat(α_{t|s} z_s + (1 − α_{t|s}) π)` with
//! `α_{t|s} = α_t / α_s`, which composes with `q_s` to give `q_t` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::vocab::{TokenSequence, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Masked,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardKernel {
    family: KernelFamily,
    schedule: NoiseSchedule,
    vocab: Vocab,
}

impl ForwardKernel {
    /// Masked kernels need a vocabulary with a mask; uniform kernels need one
    /// without.
    pub fn new(family: KernelFamily, schedule: NoiseSchedule, vocab: Vocab) -> Result<Self> {
        match (family, vocab.mask()) {
            (KernelFamily::Masked, None) => Err(Error::Config(
                "masked kernel requires a vocabulary with a mask token".into(),
            )),
            (KernelFamily::Uniform, Some(_)) => Err(Error::Config(
                "uniform kernel requires a vocabulary without a mask token".into(),
            )),
            _ => Ok(Self {
                family,
                schedule,
                vocab,
            }),
        }
    }

    pub fn masked(schedule: NoiseSchedule, vocab: Vocab) -> Result<Self> {
        Self::new(KernelFamily::Masked, schedule, vocab)
    }

    pub fn uniform(schedule: NoiseSchedule, vocab: Vocab) -> Result<Self> {
        Self::new(KernelFamily::Uniform, schedule, vocab)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    /// `q_t(· | x)` as a length-`K` vector.
    pub fn forward_marginal(&self, x_token: usize, t: f64) -> Result<Vec<f64>> {
        let alpha = self.schedule.alpha_at(t)?.alpha;
        self.marginal_at_alpha(x_token, alpha)
    }

    pub fn marginal_at_alpha(&self, x_token: usize, alpha: f64) -> Result<Vec<f64>> {
        self.check_clean_token(x_token)?;
        let k = self.vocab.size();
        let mut out = match self.family {
            KernelFamily::Masked => {
                let mut v = vec![0.0; k];
                v[self.vocab.mask().unwrap()] = 1.0 - alpha;
                v
            }
            KernelFamily::Uniform => vec![(1.0 - alpha) / k as f64; k],
        };
        out[x_token] += alpha;
        Ok(out)
    }

    /// Sample `z_t ~ q_t(· | x)` independently per position.
    pub fn corrupt_sequence(
        &self,
        x: &TokenSequence,
        t: f64,
        rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        let alpha = self.schedule.alpha_at(t)?.alpha;
        self.corrupt_at_alpha(x, alpha, rng)
    }

    /// One uniform draw per position decides survival (`u < α`); a
    /// non-surviving token becomes the mask, or a uniformly drawn category.
    pub fn corrupt_at_alpha(
        &self,
        x: &TokenSequence,
        alpha: f64,
        rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        if x.vocab() != self.vocab {
            return Err(Error::Mismatch("sequence and kernel vocabularies differ".into()));
        }
        let mut out = Vec::with_capacity(x.len());
        for &tok in x.tokens() {
            self.check_clean_token(tok)?;
            let u = rng.uniform();
            out.push(self.replace_unless(tok, u < alpha, rng));
        }
        Ok(TokenSequence::from_parts_unchecked(out, self.vocab))
    }

    pub(crate) fn replace_unless(&self, tok: usize, keep: bool, rng: &mut RngStream) -> usize {
        if keep {
            return tok;
        }
        match self.family {
            KernelFamily::Masked => self.vocab.mask().unwrap(),
            KernelFamily::Uniform => rng.below(self.vocab.size() as u64) as usize,
        }
    }

    /// Exact reverse posterior `q(z_s | z_t, x)` for this kernel's family.
    pub fn reverse_posterior(
        &self,
        z_t_token: usize,
        x_token: usize,
        params: &PosteriorParams,
    ) -> Result<Vec<f64>> {
        match self.family {
            KernelFamily::Masked => masked_reverse_posterior(z_t_token, x_token, params, self.vocab),
            KernelFamily::Uniform => {
                uniform_reverse_posterior(z_t_token, x_token, params, self.vocab.size())
            }
        }
    }

    fn check_clean_token(&self, tok: usize) -> Result<()> {
        if tok >= self.vocab.size() || self.vocab.is_mask(tok) {
            return Err(Error::Validation(format!(
                "token {tok} is not a clean category of this vocabulary"
            )));
        }
        Ok(())
    }
}

/// Scalars shared by both closed-form posteriors for a step `s < t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorParams {
    pub alpha_s: f64,
    pub alpha_t: f64,
    /// `α_t / α_s`; taken as 1 when both are zero.
    pub alpha_t_given_s: f64,
    /// `(1 − α_t) / (K α_t + 1 − α_t)`.
    pub kappa_t: f64,
}

impl PosteriorParams {
    pub fn new(alpha_s: f64, alpha_t: f64, k: usize) -> Result<Self> {
        let unit = 0.0..=1.0;
        if !unit.contains(&alpha_s) || !unit.contains(&alpha_t) {
            return Err(Error::Domain(format!(
                "alphas ({alpha_s}, {alpha_t}) must lie in [0, 1]"
            )));
        }
        if alpha_s < alpha_t {
            return Err(Error::Domain(format!(
                "alpha_s = {alpha_s} < alpha_t = {alpha_t}; s must precede t"
            )));
        }
        let alpha_t_given_s = if alpha_s == 0.0 { 1.0 } else { alpha_t / alpha_s };
        let kappa_t = (1.0 - alpha_t) / (k as f64 * alpha_t + 1.0 - alpha_t);
        Ok(Self {
            alpha_s,
            alpha_t,
            alpha_t_given_s,
            kappa_t,
        })
    }

    pub fn from_times(schedule: NoiseSchedule, s: f64, t: f64, k: usize) -> Result<Self> {
        let a_s = schedule.alpha_at(s)?.alpha;
        let a_t = schedule.alpha_at(t)?.alpha;
        Self::new(a_s, a_t, k)
    }
}

/// Masked posterior: carry an unmasked token over; otherwise mix the clean
/// token with the mask in ratio `(α_s − α_t) : (1 − α_s)`.
pub fn masked_reverse_posterior(
    z_t_token: usize,
    x_token: usize,
    params: &PosteriorParams,
    vocab: Vocab,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; vocab.size()];
    x[x_token] = 1.0;
    masked_posterior_mixture(z_t_token, &x, params, vocab)
}

/// Masked posterior with the clean token replaced by a distribution over
/// clean categories (the model-substituted reverse step).
pub fn masked_posterior_mixture(
    z_t_token: usize,
    x_probs: &[f64],
    params: &PosteriorParams,
    vocab: Vocab,
) -> Result<Vec<f64>> {
    let k = vocab.size();
    let mask = vocab
        .mask()
        .ok_or_else(|| Error::Config("masked posterior needs a mask token".into()))?;
    let mut out = vec![0.0; k];
    if z_t_token != mask {
        out[z_t_token] = 1.0;
        return Ok(out);
    }
    if params.alpha_t >= 1.0 {
        return Err(Error::Degenerate(
            "z_t is masked but alpha_t = 1 (impossible under the forward process)".into(),
        ));
    }
    let denom = 1.0 - params.alpha_t;
    let w_clean = (params.alpha_s - params.alpha_t) / denom;
    for (o, &p) in out.iter_mut().zip(x_probs) {
        *o = w_clean * p;
    }
    out[mask] += (1.0 - params.alpha_s) / denom;
    Ok(out)
}

/// Uniform-state posterior:
/// `[K α_t z⊙x + (α_{t|s} − α_t) z + (α_s − α_t) x + (1 − α_{t|s})(1 − α_s) 1/K]
///  / (K α_t ⟨z, x⟩ + 1 − α_t)`.
pub fn uniform_reverse_posterior(
    z_t_token: usize,
    x_token: usize,
    params: &PosteriorParams,
    k: usize,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; k];
    x[x_token] = 1.0;
    uniform_posterior_mixture(z_t_token, &x, params)
}

/// The same expression with `x` replaced by a distribution; the denominator
/// keeps it normalized for any point of the simplex.
pub fn uniform_posterior_mixture(
    z_t_token: usize,
    x_probs: &[f64],
    params: &PosteriorParams,
) -> Result<Vec<f64>> {
    let k = x_probs.len();
    let kf = k as f64;
    let PosteriorParams {
        alpha_s: a_s,
        alpha_t: a_t,
        alpha_t_given_s: a_ts,
        ..
    } = *params;
    let denom = kf * a_t * x_probs[z_t_token] + 1.0 - a_t;
    if denom <= 0.0 {
        return Err(Error::Degenerate(format!(
            "uniform posterior denominator is {denom} (z_t unreachable from x at alpha_t = {a_t})"
        )));
    }
    let floor = (1.0 - a_ts) * (1.0 - a_s) / kf;
    let mut out: Vec<f64> = x_probs.iter().map(|&p| (a_s - a_t) * p + floor).collect();
    out[z_t_token] += kf * a_t * x_probs[z_t_token] + (a_ts - a_t);
    for v in &mut out {
        *v /= denom;
    }
    Ok(out)
}

/// Reference posterior by explicit Bayes inversion:
/// `q(z_s | z_t, x) ∝ q_{t|s}(z_t | z_s) q_s(z_s | x)`, enumerated over all
/// `K` values of `z_s`. Independent of the closed forms above.
pub fn bayes_posterior_oracle(
    family: KernelFamily,
    z_t_token: usize,
    x_token: usize,
    alpha_s: f64,
    alpha_t: f64,
    k: usize,
) -> Result<Vec<f64>> {
    let mask = k - 1;
    let prior = |v: usize| -> f64 {
        match family {
            KernelFamily::Masked => f64::from(u8::from(v == mask)),
            KernelFamily::Uniform => 1.0 / k as f64,
        }
    };
    let a_ts = if alpha_s == 0.0 { 1.0 } else { alpha_t / alpha_s };
    let mut joint = Vec::with_capacity(k);
    for z_s in 0..k {
        let q_s = alpha_s * f64::from(u8::from(z_s == x_token)) + (1.0 - alpha_s) * prior(z_s);
        let q_ts = a_ts * f64::from(u8::from(z_t_token == z_s)) + (1.0 - a_ts) * prior(z_t_token);
        joint.push(q_ts * q_s);
    }
    let total: f64 = joint.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "z_t has zero probability under the forward process".into(),
        ));
    }
    Ok(joint.into_iter().map(|v| v / total).collect())
}
