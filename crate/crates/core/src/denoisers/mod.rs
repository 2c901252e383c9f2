//! Denoiser backends `x_θ(z_t, t)` and the visibility (attention-pattern)
//! contract shared by every backend.

mod checkpoint;
mod mlp;
mod optimal;
mod tabular;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelSpec, CHECKPOINT_VERSION};
pub use mlp::{MlpArch, MlpDenoiser};
pub use optimal::optimal_tabular_denoiser;
pub use tabular::{TabularDenoiser, TABULAR_ENTRY_LIMIT};

use serde::{Deserialize, Serialize};

use crate::categorical::CategoricalField;
use crate::error::{Error, Result};
use crate::vocab::{TokenSequence, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityMode {
    /// Every row sees every position, itself included.
    Bidirectional,
    /// Row `ℓ` sees positions `< ℓ` only.
    Causal,
    /// Row `ℓ` sees the positions that precede it in a generation order.
    PermutedCausal,
}

/// Which input positions may influence which output rows.
///
/// The causal modes are strict: a row never sees its own input token, so one
/// evaluation on a clean sequence yields every next-token distribution at once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilitySpec {
    mode: VisibilityMode,
    /// `rank[pos]` = index of `pos` in the generation order.
    rank: Option<Vec<usize>>,
}

impl VisibilitySpec {
    pub fn bidirectional() -> Self {
        Self {
            mode: VisibilityMode::Bidirectional,
            rank: None,
        }
    }

    pub fn causal() -> Self {
        Self {
            mode: VisibilityMode::Causal,
            rank: None,
        }
    }

    /// `order[i]` is the `i`-th position in generation order; it must be a
    /// permutation of `0..L`.
    pub fn permuted(order: &[usize]) -> Result<Self> {
        let mut rank = vec![usize::MAX; order.len()];
        for (i, &pos) in order.iter().enumerate() {
            if pos >= order.len() || rank[pos] != usize::MAX {
                return Err(Error::Config(format!(
                    "generation order {order:?} is not a permutation"
                )));
            }
            rank[pos] = i;
        }
        Ok(Self {
            mode: VisibilityMode::PermutedCausal,
            rank: Some(rank),
        })
    }

    /// Build from a mode; `PermutedCausal` requires `order`.
    pub fn from_mode(mode: VisibilityMode, order: Option<&[usize]>) -> Result<Self> {
        match (mode, order) {
            (VisibilityMode::PermutedCausal, Some(o)) => Self::permuted(o),
            (VisibilityMode::PermutedCausal, None) => Err(Error::Config(
                "permuted_causal visibility requires a permutation".into(),
            )),
            (VisibilityMode::Bidirectional, _) => Ok(Self::bidirectional()),
            (VisibilityMode::Causal, _) => Ok(Self::causal()),
        }
    }

    pub fn mode(&self) -> VisibilityMode {
        self.mode
    }

    pub fn sees(&self, row: usize, col: usize) -> bool {
        match self.mode {
            VisibilityMode::Bidirectional => true,
            VisibilityMode::Causal => col < row,
            VisibilityMode::PermutedCausal => {
                let rank = self.rank.as_ref().expect("permuted visibility has ranks");
                rank[col] < rank[row]
            }
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        match &self.rank {
            Some(r) if r.len() != len => Err(Error::Config(format!(
                "permutation of length {} used with a sequence of length {len}",
                r.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Per-row visibility masks, grouped so rows that share a mask share one
    /// evaluation. Bidirectional visibility yields a single group.
    pub(crate) fn row_groups(&self, len: usize) -> Vec<(Vec<bool>, Vec<usize>)> {
        match self.mode {
            VisibilityMode::Bidirectional => vec![(vec![true; len], (0..len).collect())],
            _ => (0..len)
                .map(|row| ((0..len).map(|c| self.sees(row, c)).collect(), vec![row]))
                .collect(),
        }
    }
}

/// A predictor of clean tokens from a (partially) corrupted sequence.
pub trait Denoiser: Send + Sync {
    fn vocab(&self) -> Vocab;
    fn seq_len(&self) -> usize;
    /// Total trainable parameter count.
    fn param_count(&self) -> usize;
    /// Per-position distributions over the vocabulary. For masked
    /// vocabularies the mask column always has probability zero.
    fn predict(&self, z: &TokenSequence, t: f64, vis: &VisibilitySpec) -> Result<CategoricalField>;
}

/// Gradient of a loss with respect to one output row's logits.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGradient {
    pub row: usize,
    /// `∂loss/∂logits`, one entry per vocabulary column.
    pub d_logits: Vec<f64>,
}

/// Callback handed the forward output; returns the logit gradients to
/// back-propagate.
pub type LossHook<'a> = dyn FnMut(&CategoricalField) -> Result<Vec<RowGradient>> + 'a;

/// A denoiser with a flat parameter vector and analytic gradients.
pub trait Differentiable: Denoiser {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Run the forward pass, ask `loss` for logit gradients, and accumulate
    /// the parameter gradient into `grad`.
    fn forward_backward(
        &self,
        z: &TokenSequence,
        t: f64,
        vis: &VisibilitySpec,
        loss: &mut LossHook<'_>,
        grad: &mut [f64],
    ) -> Result<()>;
}

pub(crate) fn check_input(model: &dyn Denoiser, z: &TokenSequence, vis: &VisibilitySpec) -> Result<()> {
    if z.vocab() != model.vocab() {
        return Err(Error::Mismatch("input and model vocabularies differ".into()));
    }
    if z.len() != model.seq_len() {
        return Err(Error::Mismatch(format!(
            "input length {} but model expects {}",
            z.len(),
            model.seq_len()
        )));
    }
    vis.check_len(z.len())
}

/// Any supported backend behind one type, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Tabular(TabularDenoiser),
    Mlp(MlpDenoiser),
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Tabular(m) => ModelSpec::Tabular {
                vocab: m.vocab(),
                seq_len: m.seq_len(),
                time_buckets: m.time_buckets(),
            },
            Model::Mlp(m) => ModelSpec::Mlp(m.arch().clone()),
        }
    }

    /// See [`ModelSpec::forward_flops`].
    pub fn forward_flops(&self) -> f64 {
        self.spec().forward_flops()
    }

    fn inner(&self) -> &dyn Differentiable {
        match self {
            Model::Tabular(m) => m,
            Model::Mlp(m) => m,
        }
    }
}

impl Denoiser for Model {
    fn vocab(&self) -> Vocab {
        self.inner().vocab()
    }
    fn seq_len(&self) -> usize {
        self.inner().seq_len()
    }
    fn param_count(&self) -> usize {
        self.inner().param_count()
    }
    fn predict(&self, z: &TokenSequence, t: f64, vis: &VisibilitySpec) -> Result<CategoricalField> {
        self.inner().predict(z, t, vis)
    }
}

impl Differentiable for Model {
    fn params(&self) -> &[f64] {
        self.inner().params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Tabular(m) => m.params_mut(),
            Model::Mlp(m) => m.params_mut(),
        }
    }
    fn forward_backward(
        &self,
        z: &TokenSequence,
        t: f64,
        vis: &VisibilitySpec,
        loss: &mut LossHook<'_>,
        grad: &mut [f64],
    ) -> Result<()> {
        self.inner().forward_backward(z, t, vis, loss, grad)
    }
}
