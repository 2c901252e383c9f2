//! Training and evaluation losses, with analytic gradients.
//!
//! Every objective is expressed as a list of [`Pass`]es: one denoiser call on
//! a fixed input with a fixed visibility, plus a rule turning the output rows
//! into loss terms and logit gradients. Values and gradients are therefore
//! computed from the very same random draws.

mod duo;

pub use duo::{duo_position_loss, DuoVariant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::CategoricalField;
use crate::denoisers::{Denoiser, Differentiable, RowGradient, VisibilitySpec};
use crate::error::{Error, Result};
use crate::processes::ForwardKernel;
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::vocab::TokenSequence;

/// Default lower end of the diffusion-time range; the masked-diffusion weight
/// `α'_t / (1 − α_t)` diverges at `t = 0`.
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Model family, which fixes the process, the visibility and the sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Ar,
    Mdlm,
    Duo,
    Eso,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Ar => "ar",
            ModelFamily::Mdlm => "mdlm",
            ModelFamily::Duo => "duo",
            ModelFamily::Eso => "eso",
        }
    }

    /// Whether the vocabulary carries a mask token.
    pub fn uses_mask(self) -> bool {
        matches!(self, ModelFamily::Mdlm | ModelFamily::Eso)
    }

    /// Whether the denoiser's time input is used.
    pub fn time_conditioned(self) -> bool {
        self == ModelFamily::Duo
    }

    /// The bound reported for evaluation (never the low-variance loss).
    pub fn eval_objective(self) -> ObjectiveKind {
        match self {
            ModelFamily::Ar => ObjectiveKind::Ar,
            ModelFamily::Mdlm => ObjectiveKind::Mdlm,
            ModelFamily::Duo => ObjectiveKind::Duo,
            ModelFamily::Eso => ObjectiveKind::Eso,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Ar,
    /// Continuous-time masked-diffusion NELBO.
    Mdlm,
    /// Masked loss with the time weight replaced by −1 (training only).
    LowVar,
    Duo,
    Eso,
}

impl ObjectiveKind {
    pub fn is_bound(self) -> bool {
        self != ObjectiveKind::LowVar
    }
}

/// How the masked-diffusion denoiser sees its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityPolicy {
    Bidirectional,
    /// Strict causal visibility over a fresh order per example: clean
    /// positions first, then masked ones, each group shuffled.
    ShuffledCausal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsoConfig {
    /// Expected fraction of tokens produced by the diffusion component.
    pub alpha_0: f64,
    /// Visibility of the diffusion term.
    #[serde(default = "default_eso_visibility")]
    pub visibility: VisibilityPolicy,
}

fn default_eso_visibility() -> VisibilityPolicy {
    VisibilityPolicy::ShuffledCausal
}

impl EsoConfig {
    pub fn new(alpha_0: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_0) {
            return Err(Error::Domain(format!("alpha_0 = {alpha_0} is outside [0, 1]")));
        }
        Ok(Self {
            alpha_0,
            visibility: VisibilityPolicy::ShuffledCausal,
        })
    }
}

/// One Monte Carlo draw of an objective's integrand.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSample {
    /// Sequence-level value in nats (`Σ per_position`).
    pub value: f64,
    pub per_position: Vec<f64>,
    pub t_draw: f64,
    pub z_t: TokenSequence,
    /// Contribution to a bound estimate: diffusion terms times the width of
    /// the time range, time-independent (autoregressive) terms as they are.
    /// Its expectation over uniform `t` is the bound over the range.
    pub estimate: f64,
}

/// How output rows of a pass become loss terms.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum PassLoss {
    /// `Σ coef · (−log p_row(target))` over `(row, target, coef)`.
    Nll(Vec<(usize, usize, f64)>),
    /// Uniform-state per-position loss.
    Duo {
        x: Vec<usize>,
        alpha: f64,
        alpha_prime: f64,
        variant: DuoVariant,
    },
}

/// One denoiser evaluation of an objective.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Pass {
    pub z: TokenSequence,
    pub t: f64,
    pub vis: VisibilitySpec,
    pub loss: PassLoss,
    /// Whether the terms are a time integrand (scaled by the range width in
    /// estimates) rather than time-independent.
    pub integrated: bool,
}

fn neg_log(p: f64) -> f64 {
    -p.ln()
}

impl Pass {
    /// Per-position loss contributions.
    fn terms(&self, field: &CategoricalField) -> Result<Vec<f64>> {
        let len = field.len();
        let mut out = vec![0.0; len];
        match &self.loss {
            PassLoss::Nll(items) => {
                for &(row, target, coef) in items.iter().filter(|i| i.2 != 0.0) {
                    out[row] += coef * neg_log(field.row(row)[target]);
                }
            }
            PassLoss::Duo {
                x,
                alpha,
                alpha_prime,
                variant,
            } => {
                for (row, o) in out.iter_mut().enumerate() {
                    *o = duo_position_loss(field, self.z.tokens(), x, row, *alpha, *alpha_prime, *variant)?;
                    if !o.is_finite() {
                        return Err(Error::numerical("non-finite uniform-state loss term", Some(row)));
                    }
                }
            }
        }
        Ok(out)
    }

    fn row_gradients(&self, field: &CategoricalField, scale: f64) -> Result<Vec<RowGradient>> {
        let k = field.k();
        match &self.loss {
            PassLoss::Nll(items) => {
                let mut grads: Vec<RowGradient> = Vec::with_capacity(items.len());
                for &(row, target, coef) in items {
                    if coef == 0.0 {
                        continue;
                    }
                    let p = field.row(row);
                    let mut d: Vec<f64> = p.iter().map(|&v| scale * coef * v).collect();
                    d[target] -= scale * coef;
                    match grads.iter_mut().find(|g| g.row == row) {
                        Some(g) => g.d_logits.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                        None => grads.push(RowGradient { row, d_logits: d }),
                    }
                }
                Ok(grads)
            }
            PassLoss::Duo {
                x,
                alpha,
                alpha_prime,
                variant,
            } => (0..field.len())
                .map(|row| {
                    let dp = duo::duo_prob_gradient(field, self.z.tokens(), x, row, *alpha, *alpha_prime, *variant)?;
                    let p = field.row(row);
                    let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    let d_logits = (0..k).map(|c| scale * p[c] * (dp[c] - mean)).collect();
                    Ok(RowGradient { row, d_logits })
                })
                .collect(),
        }
    }
}

/// Full objective configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub schedule: NoiseSchedule,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    /// Draw diffusion times in antithetic pairs `(t, t_min + t_max − t)`.
    #[serde(default = "default_true")]
    pub antithetic: bool,
    #[serde(default)]
    pub duo_variant: DuoVariant,
    #[serde(default)]
    pub eso: Option<EsoConfig>,
    /// Visibility of masked-diffusion passes; defaults by objective.
    #[serde(default)]
    pub visibility: Option<VisibilityPolicy>,
}

fn default_t_min() -> f64 {
    DEFAULT_T_MIN
}

fn default_true() -> bool {
    true
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind, schedule: NoiseSchedule) -> Self {
        Self {
            kind,
            schedule,
            t_min: DEFAULT_T_MIN,
            antithetic: true,
            duo_variant: DuoVariant::default(),
            eso: (kind == ObjectiveKind::Eso).then_some(EsoConfig {
                alpha_0: 1.0,
                visibility: VisibilityPolicy::ShuffledCausal,
            }),
            visibility: None,
        }
    }

    pub fn with_visibility(mut self, v: VisibilityPolicy) -> Self {
        self.visibility = Some(v);
        self
    }

    pub fn with_eso(mut self, eso: EsoConfig) -> Self {
        self.eso = Some(eso);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.t_min) {
            return Err(Error::Config(format!("t_min = {} must lie in [0, 0.5)", self.t_min)));
        }
        if let Some(e) = self.eso {
            EsoConfig::new(e.alpha_0)?;
        }
        Ok(())
    }

    /// Integration range of the diffusion time. The uniform-state loss also
    /// excludes `[1 − t_min, 1]`, where `κ_t → 1` and its weight diverges.
    pub fn t_range(&self) -> (f64, f64) {
        match self.kind {
            ObjectiveKind::Ar => (0.0, 1.0),
            ObjectiveKind::Duo => (self.t_min, 1.0 - self.t_min),
            _ => (self.t_min, 1.0),
        }
    }

    /// Factor turning an integrand draw into an estimate of the integral
    /// over [`t_range`](Self::t_range).
    pub fn time_weight(&self) -> f64 {
        match self.kind {
            ObjectiveKind::Ar => 1.0,
            _ => {
                let (lo, hi) = self.t_range();
                hi - lo
            }
        }
    }

    /// `n` diffusion times, uniform on the range (antithetic pairs if enabled).
    pub fn draw_times(&self, n: usize, rng: &mut RngStream) -> Vec<f64> {
        let (lo, hi) = self.t_range();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let t = rng.uniform_in(lo, hi);
            out.push(t);
            if self.antithetic && out.len() < n {
                out.push(lo + hi - t);
            }
        }
        out
    }

    fn masked_visibility(&self) -> VisibilityPolicy {
        self.visibility.unwrap_or(match self.kind {
            ObjectiveKind::Eso => self.eso.map_or(VisibilityPolicy::ShuffledCausal, |e| e.visibility),
            _ => VisibilityPolicy::Bidirectional,
        })
    }

    /// Draw the passes of one integrand sample at time `t`.
    pub(crate) fn plan(&self, model: &dyn Denoiser, x: &TokenSequence, t: f64, rng: &mut RngStream) -> Result<(Vec<Pass>, TokenSequence)> {
        check_clean(model, x)?;
        match self.kind {
            ObjectiveKind::Ar => Ok((vec![ar_pass(x)], x.clone())),
            ObjectiveKind::Mdlm | ObjectiveKind::LowVar => {
                let kernel = ForwardKernel::masked(self.schedule, model.vocab())?;
                let v = self.schedule.alpha_at(t)?;
                let weight = if self.kind == ObjectiveKind::Mdlm {
                    masked_weight(v.alpha, v.alpha_prime, t)?
                } else {
                    -1.0
                };
                let z = kernel.corrupt_at_alpha(x, v.alpha, rng)?;
                let pass = masked_pass(x, z.clone(), t, weight, self.masked_visibility(), rng)?;
                Ok((vec![pass], z))
            }
            ObjectiveKind::Duo => {
                let kernel = ForwardKernel::uniform(self.schedule, model.vocab())?;
                let v = self.schedule.alpha_at(t)?;
                let k = model.vocab().size() as f64;
                let kappa = (1.0 - v.alpha) / (k * v.alpha + 1.0 - v.alpha);
                if !(kappa > 0.0 && kappa < 1.0) {
                    return Err(Error::Domain(format!("kappa_t = {kappa} is outside (0, 1) at t = {t}")));
                }
                let z = kernel.corrupt_at_alpha(x, v.alpha, rng)?;
                let pass = Pass {
                    z: z.clone(),
                    t,
                    vis: VisibilitySpec::bidirectional(),
                    loss: PassLoss::Duo {
                        x: x.tokens().to_vec(),
                        alpha: v.alpha,
                        alpha_prime: v.alpha_prime,
                        variant: self.duo_variant,
                    },
                    integrated: true,
                };
                Ok((vec![pass], z))
            }
            ObjectiveKind::Eso => {
                let eso = self.eso.unwrap_or(EsoConfig {
                    alpha_0: 1.0,
                    visibility: VisibilityPolicy::ShuffledCausal,
                });
                eso_plan(model, x, eso, self.schedule, t, self.masked_visibility(), rng)
            }
        }
    }

    /// One integrand draw.
    pub fn sample(&self, model: &dyn Denoiser, x: &TokenSequence, t: f64, rng: &mut RngStream) -> Result<LossSample> {
        let (passes, z_t) = self.plan(model, x, t, rng)?;
        evaluate(model, passes, z_t, t, self.time_weight())
    }
}

fn check_clean(model: &dyn Denoiser, x: &TokenSequence) -> Result<()> {
    if x.vocab() != model.vocab() || x.len() != model.seq_len() {
        return Err(Error::Mismatch("sequence does not match the model's vocabulary/length".into()));
    }
    if !x.is_clean() {
        return Err(Error::Validation("objective input must be a clean sequence".into()));
    }
    Ok(())
}

fn masked_weight(alpha: f64, alpha_prime: f64, t: f64) -> Result<f64> {
    let w = alpha_prime / (1.0 - alpha);
    if 1.0 - alpha <= 0.0 || !w.is_finite() {
        return Err(Error::Domain(format!(
            "masked-diffusion weight α'/(1 − α) is singular at t = {t}"
        )));
    }
    Ok(w)
}

fn ar_pass(x: &TokenSequence) -> Pass {
    Pass {
        z: x.clone(),
        t: 0.0,
        vis: VisibilitySpec::causal(),
        loss: PassLoss::Nll(x.tokens().iter().enumerate().map(|(l, &tok)| (l, tok, 1.0)).collect()),
        integrated: false,
    }
}

/// Clean positions first, then masked ones, each group shuffled.
fn shuffled_order(z: &TokenSequence, rng: &mut RngStream) -> Vec<usize> {
    let (mut clean, mut masked): (Vec<usize>, Vec<usize>) =
        (0..z.len()).partition(|&l| !z.vocab().is_mask(z[l]));
    rng.shuffle(&mut clean);
    rng.shuffle(&mut masked);
    clean.extend(masked);
    clean
}

/// Pass for `weight · Σ_{ℓ ∈ M(z)} log x_θ^ℓ(z)[x^ℓ]`.
fn masked_pass(
    x: &TokenSequence,
    z: TokenSequence,
    t: f64,
    weight: f64,
    policy: VisibilityPolicy,
    rng: &mut RngStream,
) -> Result<Pass> {
    let vis = match policy {
        VisibilityPolicy::Bidirectional => VisibilitySpec::bidirectional(),
        VisibilityPolicy::ShuffledCausal => VisibilitySpec::permuted(&shuffled_order(&z, rng))?,
    };
    let items = z
        .mask_positions()
        .into_iter()
        .map(|l| (l, x[l], -weight))
        .collect();
    Ok(Pass {
        z,
        t,
        vis,
        loss: PassLoss::Nll(items),
        integrated: true,
    })
}

/// Eso-LM bound: an AR term over the masks of `z_0 ~ q_{α_0}(· | x)` plus a
/// masked-diffusion term under the schedule `α_0 · α_t`.
///
/// One uniform `u_ℓ` per position drives both draws (`z_0` keeps `x^ℓ` iff
/// `u_ℓ < α_0`, `z_t` iff `u_ℓ < α_0 α_t`), so `z_t` is nested in `z_0` and,
/// at `α_0 = 1`, the draws coincide with those of the masked NELBO.
fn eso_plan(
    model: &dyn Denoiser,
    x: &TokenSequence,
    eso: EsoConfig,
    schedule: NoiseSchedule,
    t: f64,
    policy: VisibilityPolicy,
    rng: &mut RngStream,
) -> Result<(Vec<Pass>, TokenSequence)> {
    let vocab = model.vocab();
    let mask = vocab
        .mask()
        .ok_or_else(|| Error::Config("eso objective needs a masked vocabulary".into()))?;
    let v = schedule.alpha_at(t)?;
    let a0 = eso.alpha_0;
    let alpha = a0 * v.alpha;
    let u: Vec<f64> = (0..x.len()).map(|_| rng.uniform()).collect();
    let z0: Vec<usize> = x.tokens().iter().zip(&u).map(|(&tok, &ui)| if ui < a0 { tok } else { mask }).collect();
    let zt: Vec<usize> = x.tokens().iter().zip(&u).map(|(&tok, &ui)| if ui < alpha { tok } else { mask }).collect();
    let zt = TokenSequence::from_parts_unchecked(zt, vocab);

    let mut passes = Vec::with_capacity(2);
    if a0 > 0.0 {
        let weight = masked_weight(alpha, a0 * v.alpha_prime, t)?;
        passes.push(masked_pass(x, zt.clone(), t, weight, policy, rng)?);
    }
    let masked_rows: Vec<usize> = (0..x.len()).filter(|&l| z0[l] == mask).collect();
    if !masked_rows.is_empty() {
        // Feeding the clean x under an order that lists z_0's clean positions
        // first and its masks left to right shows row ℓ exactly
        // x^{<ℓ} ∥ z_0^{≥ℓ} restricted to what precedes ℓ.
        let mut order: Vec<usize> = (0..x.len()).filter(|&l| z0[l] != mask).collect();
        rng.shuffle(&mut order);
        order.extend(&masked_rows);
        passes.push(Pass {
            z: x.clone(),
            t: 0.0,
            vis: VisibilitySpec::permuted(&order)?,
            loss: PassLoss::Nll(masked_rows.iter().map(|&l| (l, x[l], 1.0)).collect()),
            integrated: false,
        });
    }
    Ok((passes, zt))
}

fn evaluate(model: &dyn Denoiser, passes: Vec<Pass>, z_t: TokenSequence, t: f64, width: f64) -> Result<LossSample> {
    let mut per_position = vec![0.0; model.seq_len()];
    let mut estimate = 0.0;
    for pass in &passes {
        let field = model.predict(&pass.z, pass.t, &pass.vis)?;
        let terms = pass.terms(&field)?;
        estimate += if pass.integrated { width } else { 1.0 } * terms.iter().sum::<f64>();
        for (acc, v) in per_position.iter_mut().zip(terms) {
            *acc += v;
        }
    }
    if per_position.iter().any(|v| v.is_nan()) {
        let i = per_position.iter().position(|v| v.is_nan());
        return Err(Error::numerical("NaN loss term", i));
    }
    Ok(LossSample {
        value: per_position.iter().sum(),
        per_position,
        t_draw: t,
        z_t,
        estimate,
    })
}

/// Exact autoregressive negative log-likelihood `−Σ_ℓ log p(x^ℓ | x^{<ℓ})`,
/// from one strict-causal evaluation with the time input at zero. A
/// zero-probability token yields `+∞`.
pub fn ar_nll(model: &dyn Denoiser, x: &TokenSequence) -> Result<f64> {
    Ok(ar_nll_terms(model, x)?.iter().sum())
}

pub fn ar_nll_terms(model: &dyn Denoiser, x: &TokenSequence) -> Result<Vec<f64>> {
    check_clean(model, x)?;
    let field = model.predict(x, 0.0, &VisibilitySpec::causal())?;
    Ok(x.tokens().iter().enumerate().map(|(l, &tok)| neg_log(field.row(l)[tok])).collect())
}

/// `[α'_t / (1 − α_t)] Σ_{ℓ ∈ M(z_t)} log x_θ^ℓ(z_t)[x^ℓ]` for one draw of `z_t`.
pub fn mdlm_nelbo_sample(
    model: &dyn Denoiser,
    schedule: NoiseSchedule,
    x: &TokenSequence,
    t: f64,
    policy: VisibilityPolicy,
    rng: &mut RngStream,
) -> Result<LossSample> {
    ObjectiveSpec::new(ObjectiveKind::Mdlm, schedule)
        .with_visibility(policy)
        .sample(model, x, t, rng)
}

/// As [`mdlm_nelbo_sample`] with the weight replaced by −1.
pub fn mdlm_low_variance_loss(
    model: &dyn Denoiser,
    schedule: NoiseSchedule,
    x: &TokenSequence,
    t: f64,
    policy: VisibilityPolicy,
    rng: &mut RngStream,
) -> Result<LossSample> {
    ObjectiveSpec::new(ObjectiveKind::LowVar, schedule)
        .with_visibility(policy)
        .sample(model, x, t, rng)
}

pub fn duo_nelbo_sample(
    model: &dyn Denoiser,
    schedule: NoiseSchedule,
    x: &TokenSequence,
    t: f64,
    variant: DuoVariant,
    rng: &mut RngStream,
) -> Result<LossSample> {
    let mut spec = ObjectiveSpec::new(ObjectiveKind::Duo, schedule);
    spec.duo_variant = variant;
    spec.sample(model, x, t, rng)
}

pub fn esolm_nelbo_sample(
    model: &dyn Denoiser,
    schedule: NoiseSchedule,
    x: &TokenSequence,
    config: EsoConfig,
    t: f64,
    rng: &mut RngStream,
) -> Result<LossSample> {
    ObjectiveSpec::new(ObjectiveKind::Eso, schedule)
        .with_eso(config)
        .sample(model, x, t, rng)
}

/// Examples per deterministic gradient chunk; the chunking is fixed so the
/// floating-point reduction order does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// Loss and gradient of one Monte Carlo minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradient {
    /// Mean estimate in nats per token.
    pub loss_per_token: f64,
    pub grad: Vec<f64>,
}

/// Mean per-token Monte Carlo estimate over `batch` (example `i` at time
/// `times[i]`, with randomness from `rng.split(i)`) and its exact gradient
/// with respect to every model parameter.
pub fn loss_gradient<M: Differentiable>(
    spec: &ObjectiveSpec,
    model: &M,
    batch: &[TokenSequence],
    times: &[f64],
    rng: &RngStream,
) -> Result<BatchGradient> {
    if batch.len() != times.len() || batch.is_empty() {
        return Err(Error::Validation("need one time per example and a non-empty batch".into()));
    }
    let p = model.params().len();
    let tokens = (batch.len() * model.seq_len()) as f64;
    let width = spec.time_weight();
    let chunks: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut grad = vec![0.0; p];
            let mut loss = 0.0;
            for (j, x) in chunk.iter().enumerate() {
                let i = ci * GRAD_CHUNK + j;
                let mut r = rng.split(i as u64);
                let (passes, _) = spec.plan(model, x, times[i], &mut r)?;
                for pass in &passes {
                    let scale = if pass.integrated { width } else { 1.0 } / tokens;
                    let mut hook = |field: &CategoricalField| -> Result<Vec<RowGradient>> {
                        let terms = pass.terms(field)?;
                        loss += scale * terms.iter().sum::<f64>();
                        pass.row_gradients(field, scale)
                    };
                    model.forward_backward(&pass.z, pass.t, &pass.vis, &mut hook, &mut grad)?;
                }
            }
            Ok((loss, grad))
        })
        .collect();
    let mut grad = vec![0.0; p];
    let mut loss = 0.0;
    for c in chunks {
        let (l, g) = c?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite gradient", Some(i)));
    }
    Ok(BatchGradient {
        loss_per_token: loss,
        grad,
    })
}
