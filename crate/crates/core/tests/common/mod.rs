//! Reference computations for the integration tests, written independently of
//! the library's closed forms: Bayes inversion of forward kernels, exact
//! expectations of objectives by enumeration plus Gauss–Legendre quadrature,
//! and small statistics helpers.
#![allow(dead_code)]

use difflab::denoisers::{Denoiser, VisibilitySpec};
use difflab::rng::RngStream;
use difflab::schedule::NoiseSchedule;
use difflab::vocab::{TokenSequence, Vocab};

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss–Legendre quadrature of `f` over [a, b].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let rule = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        total += rule.iter().map(|&(x, w)| w * half * f(mid + half * x)).sum::<f64>();
    }
    total
}

/// Forward marginal `q(z | x)` of one token at survival probability `alpha`
/// for the masked (`mask = Some`) or uniform (`None`) prior over `k` symbols.
pub fn marginal(z: usize, x: usize, alpha: f64, k: usize, mask: Option<usize>) -> f64 {
    let prior = match mask {
        Some(m) => f64::from(u8::from(z == m)),
        None => 1.0 / k as f64,
    };
    alpha * f64::from(u8::from(z == x)) + (1.0 - alpha) * prior
}

/// `q(z_s | z_t, x)` by Bayes: `q(z_t | z_s) q(z_s | x) / q(z_t | x)`, with
/// the one-step kernel at survival `α_t/α_s` and the denominator from the
/// direct marginal at `α_t`.
pub fn bayes_posterior(z_t: usize, x: usize, a_s: f64, a_t: f64, k: usize, mask: Option<usize>) -> Option<Vec<f64>> {
    let step = if a_s == 0.0 { 1.0 } else { a_t / a_s };
    let denom = marginal(z_t, x, a_t, k, mask);
    if denom <= 0.0 {
        return None;
    }
    Some(
        (0..k)
            .map(|z_s| marginal(z_t, z_s, step, k, mask) * marginal(z_s, x, a_s, k, mask) / denom)
            .collect(),
    )
}

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// All subsets of `0..n` as bit masks.
pub fn subsets(n: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1usize << n).map(move |b| (0..n).map(|i| b >> i & 1 == 1).collect())
}

fn nll(model: &dyn Denoiser, z: &TokenSequence, t: f64, vis: &VisibilitySpec, rows: &[usize], x: &[usize]) -> f64 {
    let field = model.predict(z, t, vis).unwrap();
    rows.iter().map(|&l| -field.row(l)[x[l]].ln()).sum()
}

/// Expected `Σ_{ℓ masked} −log x_θ^ℓ(z)[x^ℓ]` over the visibility draw of
/// the given policy (`shuffled`: clean positions, then masked ones, each in
/// a uniformly random order).
fn masked_nll(model: &dyn Denoiser, z: &TokenSequence, t: f64, x: &[usize], shuffled: bool) -> f64 {
    let masked: Vec<usize> = (0..z.len()).filter(|&l| z.vocab().is_mask(z[l])).collect();
    if !shuffled {
        return nll(model, z, t, &VisibilitySpec::bidirectional(), &masked, x);
    }
    let clean: Vec<usize> = (0..z.len()).filter(|&l| !z.vocab().is_mask(z[l])).collect();
    let (pc, pm) = (permutations(&clean), permutations(&masked));
    let mut total = 0.0;
    for a in &pc {
        for b in &pm {
            let order: Vec<usize> = a.iter().chain(b).copied().collect();
            total += nll(model, z, t, &VisibilitySpec::permuted(&order).unwrap(), &masked, x);
        }
    }
    total / (pc.len() * pm.len()) as f64
}

fn masked_copy(x: &[usize], hide: &[bool], vocab: Vocab) -> TokenSequence {
    let m = vocab.mask().unwrap();
    let toks = x.iter().zip(hide).map(|(&t, &h)| if h { m } else { t }).collect();
    TokenSequence::new(toks, vocab).unwrap()
}

/// Exact masked-diffusion bound over `[t_lo, 1]` with survival `scale · α_t`
/// (`scale = 1` for the plain masked objective).
pub fn exact_masked_term(
    model: &dyn Denoiser,
    schedule: NoiseSchedule,
    x: &[usize],
    t_lo: f64,
    scale: f64,
    shuffled: bool,
) -> f64 {
    let vocab = model.vocab();
    let len = x.len();
    let integrand = |t: f64| {
        let h = 1e-6;
        let alpha = scale * schedule.alpha(t);
        // Central difference for α', independent of the library's derivative.
        let d_alpha = scale * (schedule.alpha((t + h).min(1.0)) - schedule.alpha((t - h).max(0.0)))
            / ((t + h).min(1.0) - (t - h).max(0.0));
        let mut acc = 0.0;
        for hide in subsets(len) {
            let n_masked = hide.iter().filter(|&&h| h).count();
            if n_masked == 0 {
                continue;
            }
            let p = (1.0 - alpha).powi(n_masked as i32) * alpha.powi((len - n_masked) as i32);
            let z = masked_copy(x, &hide, vocab);
            acc += p * masked_nll(model, &z, t, x, shuffled);
        }
        -d_alpha / (1.0 - alpha) * acc
    };
    integrate(integrand, t_lo, 1.0, 64, 20)
}

/// Exact autoregressive part of the Eso-LM bound: expectation over
/// `z_0 ~ q_{α_0}(· | x)` of the causal NLL of the masked positions, with
/// the clean positions of `z_0` visible first in uniformly random order and
/// the masked positions left to right.
pub fn exact_eso_ar_term(model: &dyn Denoiser, x: &[usize], alpha_0: f64) -> f64 {
    let vocab = model.vocab();
    let xs = TokenSequence::new(x.to_vec(), vocab).unwrap();
    let len = x.len();
    let mut total = 0.0;
    for hide in subsets(len) {
        let masked: Vec<usize> = (0..len).filter(|&l| hide[l]).collect();
        if masked.is_empty() {
            continue;
        }
        let p = (1.0 - alpha_0).powi(masked.len() as i32) * alpha_0.powi((len - masked.len()) as i32);
        let clean: Vec<usize> = (0..len).filter(|&l| !hide[l]).collect();
        let perms = permutations(&clean);
        let mut e = 0.0;
        for a in &perms {
            let order: Vec<usize> = a.iter().chain(&masked).copied().collect();
            e += nll(model, &xs, 0.0, &VisibilitySpec::permuted(&order).unwrap(), &masked, x);
        }
        total += p * e / perms.len() as f64;
    }
    total
}

/// Exact Eso-LM bound: AR term plus the masked term under `α_0 · α_t`.
pub fn exact_eso(model: &dyn Denoiser, schedule: NoiseSchedule, x: &[usize], t_lo: f64, alpha_0: f64, shuffled: bool) -> f64 {
    let diffusion = if alpha_0 > 0.0 {
        exact_masked_term(model, schedule, x, t_lo, alpha_0, shuffled)
    } else {
        0.0
    };
    diffusion + exact_eso_ar_term(model, x, alpha_0)
}

/// Path-space KL between the true reverse of the uniform-state process given
/// `x` and the model's reverse jump process, integrated over `[t_lo, t_hi]`.
///
/// Per position with current state `i`, the forward process jumps to each
/// `j ≠ i` at rate `λ = −α'/(Kα)`; the true reverse rate is
/// `λ q_t(j | x)/q_t(i | x)` and the model's `λ x̄_θ[j]/x̄_θ[i]` with
/// `x̄_θ = Kα x_θ + (1 − α)`. The integrand is
/// `E_{z_t} Σ_ℓ Σ_{j≠i} [R̂ − R + R log(R / R̂)]`.
pub fn exact_uniform_path_kl(model: &dyn Denoiser, schedule: NoiseSchedule, x: &[usize], t_lo: f64, t_hi: f64) -> f64 {
    let vocab = model.vocab();
    let k = vocab.size();
    let len = x.len();
    let kf = k as f64;
    let integrand = |t: f64| {
        let h = 1e-6;
        let alpha = schedule.alpha(t);
        let d_alpha = (schedule.alpha(t + h) - schedule.alpha(t - h)) / (2.0 * h);
        let lambda = -d_alpha / (kf * alpha);
        let mut acc = 0.0;
        for code in 0..k.pow(len as u32) {
            let z: Vec<usize> = (0..len).map(|l| code / k.pow(l as u32) % k).collect();
            let p: f64 = (0..len).map(|l| marginal(z[l], x[l], alpha, k, None)).product();
            let zs = TokenSequence::new(z.clone(), vocab).unwrap();
            let field = model.predict(&zs, t, &VisibilitySpec::bidirectional()).unwrap();
            let mut s = 0.0;
            for l in 0..len {
                let i = z[l];
                let q = |c: usize| marginal(c, x[l], alpha, k, None);
                let xb: Vec<f64> = field.row(l).iter().map(|&v| kf * alpha * v + 1.0 - alpha).collect();
                for j in (0..k).filter(|&j| j != i) {
                    let r = lambda * q(j) / q(i);
                    let rh = lambda * xb[j] / xb[i];
                    s += rh - r + r * (r / rh).ln();
                }
            }
            acc += p * s;
        }
        acc
    };
    integrate(integrand, t_lo, t_hi, 64, 20)
}

/// Total-variation distance between two distributions given as maps from
/// outcome to probability.
pub fn total_variation(p: &std::collections::BTreeMap<Vec<usize>, f64>, q: &std::collections::BTreeMap<Vec<usize>, f64>) -> f64 {
    let keys: std::collections::BTreeSet<_> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Standard normal draws from a seeded stream.
pub fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut r = RngStream::new(seed);
    (0..n).map(|_| r.normal()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
