use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Rows may deviate from 1 by this much before construction rejects them.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Per-position categorical distributions: an `L × K` row-major matrix whose
/// rows are renormalized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalField {
    probs: Vec<f64>,
    k: usize,
}

impl CategoricalField {
    pub fn new(probs: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 || probs.len() % k != 0 {
            return Err(Error::Validation(format!(
                "{} entries do not form rows of width {k}",
                probs.len()
            )));
        }
        let mut probs = probs;
        for (row_idx, row) in probs.chunks_exact_mut(k).enumerate() {
            validate_simplex(row).map_err(|e| Error::Validation(format!("row {row_idx}: {e}")))?;
            normalize(row);
        }
        Ok(Self { probs, k })
    }

    /// Rows already known to be normalized (e.g. softmax outputs).
    pub(crate) fn from_rows_unchecked(probs: Vec<f64>, k: usize) -> Self {
        debug_assert!(probs.len() % k == 0);
        Self { probs, k }
    }

    pub fn uniform(len: usize, k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; len * k],
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.probs[pos * self.k..(pos + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

fn validate_simplex(p: &[f64]) -> std::result::Result<(), String> {
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(format!("entry {i} = {v} is not a non-negative finite number"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("entries sum to {sum}, not 1"));
    }
    Ok(())
}

fn normalize(p: &mut [f64]) {
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
}

/// Draw an index with probability `probs[i]`.
pub fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> Result<usize> {
    validate_simplex(probs).map_err(Error::Validation)?;
    Ok(sample_unchecked(probs, rng))
}

/// Inverse-CDF draw without validation. Never returns an index with zero mass.
pub(crate) fn sample_unchecked(probs: &[f64], rng: &mut RngStream) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Index of the largest probability (first on ties).
pub(crate) fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

/// Numerically stable softmax over `logits`, restricted to the `active`
/// columns; inactive columns get probability zero.
pub(crate) fn softmax_into(logits: &[f64], active: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let max = active
        .iter()
        .map(|&c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &c in active {
        let e = (logits[c] - max).exp();
        out[c] = e;
        sum += e;
    }
    for &c in active {
        out[c] /= sum;
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}
