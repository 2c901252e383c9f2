use super::TabularDenoiser;
use crate::error::{Error, Result};
use crate::processes::{ForwardKernel, KernelFamily};
use crate::training::SyntheticLanguage;

/// The Bayes-optimal table for `language` under `kernel`, evaluated at each
/// bucket's midpoint time.
///
/// For a context `c` (a token or "hidden" per position) and row `ℓ`, the
/// entry is the posterior of `x^ℓ` given the visible evidence, obtained by
/// summing over every clean sequence. Masked kernels condition on all visible
/// positions, so an unmasked visible `z^ℓ` yields a one-hot row. Uniform
/// kernels leave position `ℓ` itself out, `q(x^ℓ | z^{¬ℓ})`: plugging that
/// into the uniform posterior formula recovers the true reverse transition,
/// because the formula is linear in `x` once its denominator `q_t(z^ℓ | x)`
/// is taken as `⟨q_t(z^ℓ | ·), x⟩`. Contexts impossible under the language
/// keep uniform rows.
pub fn optimal_tabular_denoiser(
    language: &SyntheticLanguage,
    kernel: &ForwardKernel,
    time_buckets: usize,
) -> Result<TabularDenoiser> {
    let vocab = kernel.vocab();
    language.check_vocab(vocab)?;
    let len = language.seq_len();
    let mut table = TabularDenoiser::uniform(vocab, len, time_buckets)?;
    let support = language.enumerate()?;
    let k = vocab.size();
    let hidden = k;
    let data = vocab.data_tokens();
    let contexts = table.context_count();
    let masked = kernel.family() == KernelFamily::Masked;
    // Masked posteriors depend on t only through α ∈ (0, 1), so one bucket
    // suffices unless a midpoint hits an endpoint.
    let alphas: Vec<f64> = (0..time_buckets)
        .map(|b| kernel.schedule().alpha(table.bucket_time(b)))
        .collect();
    if masked && alphas.iter().any(|&a| a <= 0.0 || a >= 1.0) {
        return Err(Error::Domain("bucket midpoint with α ∈ {0, 1}".into()));
    }
    let distinct_buckets = if masked { 1 } else { time_buckets };

    let mut post = vec![0.0; k];
    for b in 0..distinct_buckets {
        let alpha = alphas[b];
        let lik = |z: usize, x: usize| -> f64 {
            match kernel.family() {
                KernelFamily::Masked => {
                    if z == x {
                        alpha
                    } else if vocab.is_mask(z) {
                        1.0 - alpha
                    } else {
                        0.0
                    }
                }
                KernelFamily::Uniform => (1.0 - alpha) / k as f64 + if z == x { alpha } else { 0.0 },
            }
        };
        for key in 0..contexts {
            let ctx = table.decode_context(key);
            let weights: Vec<f64> = support
                .iter()
                .map(|(x, p)| {
                    p * ctx
                        .iter()
                        .zip(x)
                        .filter(|(&z, _)| z != hidden)
                        .map(|(&z, &xv)| lik(z, xv))
                        .product::<f64>()
                })
                .collect();
            for row in 0..len {
                post.iter_mut().for_each(|v| *v = 0.0);
                for ((x, _), &w) in support.iter().zip(&weights) {
                    let w = if !masked && ctx[row] != hidden {
                        w / lik(ctx[row], x[row])
                    } else {
                        w
                    };
                    post[x[row]] += w;
                }
                let total: f64 = post.iter().sum();
                if total <= 0.0 {
                    continue;
                }
                let entry = table.entry_mut(key, row, b);
                for &c in &data {
                    entry[c] = (post[c] / total).ln();
                }
            }
        }
    }
    if distinct_buckets < time_buckets {
        for key in 0..contexts {
            for row in 0..len {
                let first = table.entry(key, row, 0).to_vec();
                for b in 1..time_buckets {
                    table.entry_mut(key, row, b).copy_from_slice(&first);
                }
            }
        }
    }
    Ok(table)
}
