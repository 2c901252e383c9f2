use super::{check_input, Denoiser, Differentiable, LossHook, VisibilitySpec};
use crate::categorical::{softmax_into, CategoricalField};
use crate::error::{Error, Result};
use crate::vocab::{TokenSequence, Vocab};

/// Upper bound on `contexts × L × time_buckets`.
pub const TABULAR_ENTRY_LIMIT: usize = 10_000_000;

/// A lookup table of logits indexed by (visible context, position, time bucket).
///
/// The context of row `ℓ` records, for every position, either the token found
/// there or "hidden" when the visibility spec forbids row `ℓ` from seeing it,
/// so one table serves every visibility mode. Logits may be `−∞` to express
/// exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDenoiser {
    vocab: Vocab,
    seq_len: usize,
    time_buckets: usize,
    active: Vec<usize>,
    logits: Vec<f64>,
}

impl TabularDenoiser {
    /// All-zero logits, i.e. uniform over the clean categories.
    pub fn uniform(vocab: Vocab, seq_len: usize, time_buckets: usize) -> Result<Self> {
        let entries = Self::entry_count(vocab, seq_len, time_buckets)?;
        Ok(Self {
            vocab,
            seq_len,
            time_buckets,
            active: vocab.data_tokens(),
            logits: vec![0.0; entries * vocab.size()],
        })
    }

    pub fn from_logits(
        vocab: Vocab,
        seq_len: usize,
        time_buckets: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::uniform(vocab, seq_len, time_buckets)?;
        if logits.len() != m.logits.len() {
            return Err(Error::Mismatch(format!(
                "expected {} logits, got {}",
                m.logits.len(),
                logits.len()
            )));
        }
        m.logits = logits;
        Ok(m)
    }

    /// Number of (context, position, bucket) entries; errors above the guard.
    pub fn entry_count(vocab: Vocab, seq_len: usize, time_buckets: usize) -> Result<usize> {
        if seq_len == 0 || time_buckets == 0 {
            return Err(Error::Config("tabular denoiser needs L ≥ 1 and ≥ 1 time bucket".into()));
        }
        let symbols = (vocab.size() + 1) as u128;
        let contexts = symbols.checked_pow(seq_len as u32).unwrap_or(u128::MAX);
        let entries = contexts
            .saturating_mul(seq_len as u128)
            .saturating_mul(time_buckets as u128);
        if entries > TABULAR_ENTRY_LIMIT as u128 {
            return Err(Error::StateSpace(format!(
                "tabular denoiser would need {entries} entries (limit {TABULAR_ENTRY_LIMIT})"
            )));
        }
        Ok(entries as usize)
    }

    pub fn time_buckets(&self) -> usize {
        self.time_buckets
    }

    pub fn context_count(&self) -> usize {
        (self.vocab.size() + 1).pow(self.seq_len as u32)
    }

    pub fn bucket(&self, t: f64) -> usize {
        ((t * self.time_buckets as f64) as usize).min(self.time_buckets - 1)
    }

    /// Midpoint time of a bucket.
    pub fn bucket_time(&self, bucket: usize) -> f64 {
        (bucket as f64 + 0.5) / self.time_buckets as f64
    }

    /// Context key of `row`: base-(K+1) digits, digit `K` meaning hidden.
    pub fn context_key(&self, z: &[usize], row: usize, vis: &VisibilitySpec) -> usize {
        let hidden = self.vocab.size();
        let base = hidden + 1;
        z.iter().enumerate().rev().fold(0, |acc, (col, &tok)| {
            acc * base + if vis.sees(row, col) { tok } else { hidden }
        })
    }

    /// Decode a context key into per-position symbols (`K` = hidden).
    pub fn decode_context(&self, mut key: usize) -> Vec<usize> {
        let base = self.vocab.size() + 1;
        (0..self.seq_len)
            .map(|_| {
                let d = key % base;
                key /= base;
                d
            })
            .collect()
    }

    pub(crate) fn offset(&self, key: usize, row: usize, bucket: usize) -> usize {
        ((key * self.seq_len + row) * self.time_buckets + bucket) * self.vocab.size()
    }

    pub fn entry(&self, key: usize, row: usize, bucket: usize) -> &[f64] {
        let o = self.offset(key, row, bucket);
        &self.logits[o..o + self.vocab.size()]
    }

    pub fn entry_mut(&mut self, key: usize, row: usize, bucket: usize) -> &mut [f64] {
        let o = self.offset(key, row, bucket);
        let k = self.vocab.size();
        &mut self.logits[o..o + k]
    }

    fn forward(&self, z: &TokenSequence, t: f64, vis: &VisibilitySpec) -> Result<(CategoricalField, Vec<usize>)> {
        check_input(self, z, vis)?;
        let k = self.vocab.size();
        let bucket = self.bucket(t.clamp(0.0, 1.0));
        let mut probs = vec![0.0; self.seq_len * k];
        let mut offsets = Vec::with_capacity(self.seq_len);
        for row in 0..self.seq_len {
            let key = self.context_key(z.tokens(), row, vis);
            let o = self.offset(key, row, bucket);
            softmax_into(&self.logits[o..o + k], &self.active, &mut probs[row * k..(row + 1) * k]);
            offsets.push(o);
        }
        Ok((CategoricalField::from_rows_unchecked(probs, k), offsets))
    }
}

impl Denoiser for TabularDenoiser {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn param_count(&self) -> usize {
        self.logits.len()
    }

    fn predict(&self, z: &TokenSequence, t: f64, vis: &VisibilitySpec) -> Result<CategoricalField> {
        Ok(self.forward(z, t, vis)?.0)
    }
}

impl Differentiable for TabularDenoiser {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn forward_backward(
        &self,
        z: &TokenSequence,
        t: f64,
        vis: &VisibilitySpec,
        loss: &mut LossHook<'_>,
        grad: &mut [f64],
    ) -> Result<()> {
        let (field, offsets) = self.forward(z, t, vis)?;
        for g in loss(&field)? {
            let o = offsets[g.row];
            for &c in &self.active {
                grad[o + c] += g.d_logits[c];
            }
        }
        Ok(())
    }
}
