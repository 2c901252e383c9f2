//! Uniform-state (Duo) continuous-time loss.
//!
//! With `x̄ = Kα_t x + (1 − α_t) 1`, `x̄_θ = Kα_t x_θ + (1 − α_t) 1`, `i` the
//! observed category of `z_t^ℓ` and `m` the clean one, the per-position
//! integrand is `(α'_t / (Kα_t)) · B`, where
//!
//! ```text
//! B = K/x̄_i − K/(x̄_θ)_i
//!     − (κ_t 1[i=m] + 1[i≠m]) Σ_{j ∈ vocab} log((x̄_θ)_i / (x̄_θ)_j)
//!     − Kα_t/(1 − α_t) · log((x̄_θ)_i / (x̄_θ)_m) · 1[i≠m]
//!     − ((K − 1) κ_t 1[i=m] − κ_t⁻¹ 1[i≠m]) log κ_t.
//! ```
//!
//! This is the path-space KL between the true and model-substituted reverse
//! jump processes and is non-negative in expectation; it matches the
//! discrete-time ELBO as the step count grows. [`DuoVariant::Printed`] keeps
//! the alternative reading in which the inner sum runs over sequence positions
//! and the prefactor is `−α'_t / (Kα_t)`; it is kept for comparison only.

use serde::{Deserialize, Serialize};

use crate::categorical::CategoricalField;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuoVariant {
    /// Inner sum over vocabulary entries, weight `α'_t / (Kα_t)`.
    #[default]
    Vocabulary,
    /// Inner sum over positions `j` of `log((x̄_θ^ℓ)_i / (x̄_θ^j)_i)`, weight
    /// `−α'_t / (Kα_t)`.
    Printed,
}

struct Terms {
    k: f64,
    kappa: f64,
    c1: f64,
    ratio_weight: f64,
    log_kappa_coef: f64,
    bar_i: f64,
}

fn terms(k: usize, alpha: f64, i: usize, m: usize) -> Terms {
    let kf = k as f64;
    let kappa = (1.0 - alpha) / (kf * alpha + 1.0 - alpha);
    let same = i == m;
    Terms {
        k: kf,
        kappa,
        c1: if same { kappa } else { 1.0 },
        ratio_weight: if same { 0.0 } else { kf * alpha / (1.0 - alpha) },
        log_kappa_coef: if same { (kf - 1.0) * kappa } else { -1.0 / kappa },
        bar_i: kf * alpha * f64::from(u8::from(same)) + 1.0 - alpha,
    }
}

fn bar(p: &[f64], alpha: f64) -> Vec<f64> {
    let k = p.len() as f64;
    p.iter().map(|&v| k * alpha * v + 1.0 - alpha).collect()
}

/// Loss of position `row` given the denoiser output `field`.
pub fn duo_position_loss(
    field: &CategoricalField,
    z: &[usize],
    x: &[usize],
    row: usize,
    alpha: f64,
    alpha_prime: f64,
    variant: DuoVariant,
) -> Result<f64> {
    let k = field.k();
    let (i, m) = (z[row], x[row]);
    let tm = terms(k, alpha, i, m);
    let xb = bar(field.row(row), alpha);
    let pre = alpha_prime / (tm.k * alpha);
    match variant {
        DuoVariant::Vocabulary => {
            let sum_log: f64 = xb.iter().map(|b| (xb[i] / b).ln()).sum();
            let bracket = tm.k / tm.bar_i - tm.k / xb[i]
                - tm.c1 * sum_log
                - tm.ratio_weight * (xb[i] / xb[m]).ln()
                - tm.log_kappa_coef * tm.kappa.ln();
            Ok(pre * bracket)
        }
        DuoVariant::Printed => {
            let sum_log: f64 = (0..field.len())
                .map(|j| (xb[i] / bar(field.row(j), alpha)[i]).ln())
                .sum();
            let bracket = tm.k / tm.bar_i - tm.k / xb[i]
                - tm.c1 * sum_log
                - tm.ratio_weight * (xb[i] / xb[m]).ln()
                - tm.log_kappa_coef * tm.kappa.ln();
            Ok(-pre * bracket)
        }
    }
}

/// `∂loss_row / ∂x_θ^row` (vocabulary variant only).
pub(crate) fn duo_prob_gradient(
    field: &CategoricalField,
    z: &[usize],
    x: &[usize],
    row: usize,
    alpha: f64,
    alpha_prime: f64,
    variant: DuoVariant,
) -> Result<Vec<f64>> {
    if variant != DuoVariant::Vocabulary {
        return Err(Error::Config(
            "gradients are only available for the vocabulary-sum uniform-state loss".into(),
        ));
    }
    let k = field.k();
    let (i, m) = (z[row], x[row]);
    let tm = terms(k, alpha, i, m);
    let xb = bar(field.row(row), alpha);
    let pre = alpha_prime / (tm.k * alpha);
    let dbar = tm.k * alpha;
    Ok((0..k)
        .map(|c| {
            let is_i = f64::from(u8::from(c == i));
            let is_m = f64::from(u8::from(c == m));
            let mut d = 0.0;
            if c == i {
                d += tm.k / (xb[i] * xb[i]);
            }
            d -= tm.c1 * (tm.k * is_i - 1.0) / xb[c];
            d -= tm.ratio_weight * (is_i - is_m) / xb[c];
            pre * d * dbar
        })
        .collect())
}
