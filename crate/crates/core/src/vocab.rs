use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category set of a model.
///
/// Absorbing-state (masked) vocabularies reserve one index for `[MASK]`; by
/// convention it is the last one. Uniform-state vocabularies carry no mask: the
/// uniform prior spreads over every category, so a mask slot would be generated
/// like any other token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocab {
    size_k: usize,
    mask_index: Option<usize>,
}

impl Vocab {
    /// `data_tokens` clean categories plus a trailing mask.
    pub fn with_mask(data_tokens: usize) -> Result<Self> {
        Self::new(data_tokens + 1, Some(data_tokens))
    }

    /// `size_k` clean categories, no mask.
    pub fn without_mask(size_k: usize) -> Result<Self> {
        Self::new(size_k, None)
    }

    pub fn new(size_k: usize, mask_index: Option<usize>) -> Result<Self> {
        if size_k < 2 {
            return Err(Error::Validation(format!("vocabulary size {size_k} < 2")));
        }
        if let Some(m) = mask_index {
            if m >= size_k {
                return Err(Error::Validation(format!(
                    "mask index {m} outside vocabulary of size {size_k}"
                )));
            }
        }
        Ok(Self { size_k, mask_index })
    }

    pub fn size(&self) -> usize {
        self.size_k
    }

    pub fn mask(&self) -> Option<usize> {
        self.mask_index
    }

    pub fn is_mask(&self, token: usize) -> bool {
        self.mask_index == Some(token)
    }

    /// Number of non-mask categories.
    pub fn data_size(&self) -> usize {
        self.size_k - usize::from(self.mask_index.is_some())
    }

    /// Non-mask categories in increasing order.
    pub fn data_tokens(&self) -> Vec<usize> {
        (0..self.size_k).filter(|&v| !self.is_mask(v)).collect()
    }
}

/// A length-`L` sequence of category indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<usize>,
    vocab: Vocab,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, vocab: Vocab) -> Result<Self> {
        if let Some((pos, &tok)) = tokens.iter().enumerate().find(|(_, &t)| t >= vocab.size()) {
            return Err(Error::Validation(format!(
                "token {tok} at position {pos} outside vocabulary of size {}",
                vocab.size()
            )));
        }
        Ok(Self { tokens, vocab })
    }

    /// Like [`TokenSequence::new`] but additionally rejects mask tokens.
    pub fn clean(tokens: Vec<usize>, vocab: Vocab) -> Result<Self> {
        let seq = Self::new(tokens, vocab)?;
        if let Some(pos) = seq.mask_positions().first() {
            return Err(Error::Validation(format!(
                "clean sequence contains a mask at position {pos}"
            )));
        }
        Ok(seq)
    }

    pub(crate) fn from_parts_unchecked(tokens: Vec<usize>, vocab: Vocab) -> Self {
        debug_assert!(tokens.iter().all(|&t| t < vocab.size()));
        Self { tokens, vocab }
    }

    pub fn all_masked(len: usize, vocab: Vocab) -> Result<Self> {
        let m = vocab
            .mask()
            .ok_or_else(|| Error::Validation("vocabulary has no mask token".into()))?;
        Ok(Self {
            tokens: vec![m; len],
            vocab,
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [usize] {
        &mut self.tokens
    }

    pub fn into_tokens(self) -> Vec<usize> {
        self.tokens
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.tokens.iter().all(|&t| !self.vocab.is_mask(t))
    }

    /// Positions holding the mask token, in increasing order.
    pub fn mask_positions(&self) -> Vec<usize> {
        (0..self.tokens.len())
            .filter(|&i| self.vocab.is_mask(self.tokens[i]))
            .collect()
    }
}

impl std::ops::Index<usize> for TokenSequence {
    type Output = usize;
    fn index(&self, i: usize) -> &usize {
        &self.tokens[i]
    }
}
