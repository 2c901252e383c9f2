use serde::{Deserialize, Serialize};

use super::{check_input, Denoiser, Differentiable, LossHook, VisibilityMode, VisibilitySpec};
use crate::categorical::{softmax_into, CategoricalField};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vocab::{TokenSequence, Vocab};

/// Shape of an [`MlpDenoiser`].
///
/// Row `ℓ` of the output is computed from the one-hot encodings of the
/// positions visible to `ℓ` (invisible positions contribute zeros) concatenated
/// with a sinusoidal time embedding, passed through `tanh` hidden layers and a
/// per-position output head over the clean categories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub vocab: Vocab,
    pub seq_len: usize,
    pub hidden: Vec<usize>,
    /// Even number of embedding features `sin(π f t), cos(π f t)`, `f = 1..E/2`.
    pub time_embed_dim: usize,
    /// When false the embedding input is held at zero (parameters still exist).
    pub time_conditioning: bool,
}

impl MlpArch {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("mlp: seq_len must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("mlp: need at least one non-empty hidden layer".into()));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("mlp: time_embed_dim must be even".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.seq_len * self.vocab.size() + self.time_embed_dim
    }

    fn outputs(&self) -> usize {
        self.vocab.data_size()
    }

    /// `(fan_in, fan_out)` of each trunk layer.
    fn trunk_shapes(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.input_dim();
        self.hidden
            .iter()
            .map(|&h| {
                let s = (fan_in, h);
                fan_in = h;
                s
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let trunk: usize = self.trunk_shapes().iter().map(|(i, o)| i * o + o).sum();
        let last = *self.hidden.last().unwrap();
        trunk + self.seq_len * (last * self.outputs() + self.outputs())
    }

    /// Dense multiply-adds (each counted as two FLOPs) of one trunk pass.
    pub fn trunk_flops(&self) -> f64 {
        self.trunk_shapes().iter().map(|(i, o)| 2.0 * (i * o) as f64).sum()
    }

    /// FLOPs of one output head.
    pub fn head_flops(&self) -> f64 {
        2.0 * (*self.hidden.last().unwrap() * self.outputs()) as f64
    }

    /// Number of trunk passes needed for one full-sequence prediction.
    pub fn trunk_passes(&self, mode: VisibilityMode) -> usize {
        match mode {
            VisibilityMode::Bidirectional => 1,
            VisibilityMode::Causal | VisibilityMode::PermutedCausal => self.seq_len,
        }
    }

    /// FLOPs of one `predict` call over all `L` rows. Activations and the
    /// softmax are not counted.
    pub fn forward_flops(&self, mode: VisibilityMode) -> f64 {
        self.trunk_passes(mode) as f64 * self.trunk_flops() + self.seq_len as f64 * self.head_flops()
    }
}

/// Multi-layer perceptron denoiser with analytic back-propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser {
    arch: MlpArch,
    active: Vec<usize>,
    params: Vec<f64>,
}

struct Pass {
    /// Post-activation outputs of each trunk layer.
    layers: Vec<Vec<f64>>,
    visible: Vec<bool>,
}

impl MlpDenoiser {
    /// Gaussian weights with variance `1/fan_in` (fan-in of the first layer
    /// counts only its non-zero inputs), zero biases.
    pub fn new(arch: MlpArch, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let mut params = Vec::with_capacity(arch.param_count());
        let first_fan_in = (arch.seq_len + arch.time_embed_dim) as f64;
        for (layer, (fan_in, fan_out)) in arch.trunk_shapes().into_iter().enumerate() {
            let scale = if layer == 0 { first_fan_in } else { fan_in as f64 }.sqrt().recip();
            params.extend((0..fan_in * fan_out).map(|_| rng.normal() * scale));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        let last = *arch.hidden.last().unwrap();
        let scale = (last as f64).sqrt().recip();
        for _ in 0..arch.seq_len {
            params.extend((0..last * arch.outputs()).map(|_| rng.normal() * scale));
            params.extend(std::iter::repeat_n(0.0, arch.outputs()));
        }
        debug_assert_eq!(params.len(), arch.param_count());
        Ok(Self {
            active: arch.vocab.data_tokens(),
            arch,
            params,
        })
    }

    pub fn from_params(arch: MlpArch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Mismatch(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            active: arch.vocab.data_tokens(),
            arch,
            params,
        })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn time_embedding(&self, t: f64) -> Vec<f64> {
        let e = self.arch.time_embed_dim;
        if !self.arch.time_conditioning {
            return vec![0.0; e];
        }
        (0..e / 2)
            .flat_map(|i| {
                let w = std::f64::consts::PI * (i + 1) as f64 * t;
                [w.sin(), w.cos()]
            })
            .collect()
    }

    fn trunk_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.arch
            .trunk_shapes()
            .iter()
            .map(|(i, o)| {
                let start = off;
                off += i * o + o;
                start
            })
            .collect()
    }

    fn head_offset(&self, row: usize) -> usize {
        let trunk: usize = self.arch.trunk_shapes().iter().map(|(i, o)| i * o + o).sum();
        let last = *self.arch.hidden.last().unwrap();
        let per_head = last * self.arch.outputs() + self.arch.outputs();
        trunk + row * per_head
    }

    fn trunk(&self, z: &[usize], emb: &[f64], visible: Vec<bool>, offsets: &[usize]) -> Pass {
        let k = self.arch.vocab.size();
        let lk = self.arch.seq_len * k;
        let shapes = self.arch.trunk_shapes();
        let mut layers = Vec::with_capacity(shapes.len());

        let (fan_in, fan_out) = shapes[0];
        let w = &self.params[offsets[0]..offsets[0] + fan_in * fan_out];
        let b = &self.params[offsets[0] + fan_in * fan_out..offsets[0] + fan_in * fan_out + fan_out];
        let mut h: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (col, &tok) in z.iter().enumerate() {
                    if visible[col] {
                        acc += row[col * k + tok];
                    }
                }
                for (e, &v) in emb.iter().enumerate() {
                    acc += row[lk + e] * v;
                }
                acc.tanh()
            })
            .collect();
        layers.push(h.clone());

        for (li, &(fan_in, fan_out)) in shapes.iter().enumerate().skip(1) {
            let off = offsets[li];
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            h = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    (b[o] + row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>()).tanh()
                })
                .collect();
            layers.push(h.clone());
        }
        Pass { layers, visible }
    }

    fn head(&self, row: usize, h: &[f64], out: &mut [f64]) {
        let a = self.arch.outputs();
        let last = h.len();
        let off = self.head_offset(row);
        let w = &self.params[off..off + a * last];
        let b = &self.params[off + a * last..off + a * last + a];
        let mut logits = vec![f64::NEG_INFINITY; self.arch.vocab.size()];
        for (j, &c) in self.active.iter().enumerate() {
            logits[c] = b[j] + w[j * last..(j + 1) * last].iter().zip(h).map(|(x, y)| x * y).sum::<f64>();
        }
        softmax_into(&logits, &self.active, out);
    }

    fn forward(&self, z: &TokenSequence, t: f64, vis: &VisibilitySpec) -> Result<(CategoricalField, Vec<(Pass, Vec<usize>)>)> {
        check_input(self, z, vis)?;
        let k = self.arch.vocab.size();
        let len = self.arch.seq_len;
        let emb = self.time_embedding(t);
        let offsets = self.trunk_offsets();
        let mut probs = vec![0.0; len * k];
        let mut passes = Vec::new();
        for (visible, rows) in vis.row_groups(len) {
            let pass = self.trunk(z.tokens(), &emb, visible, &offsets);
            let h = pass.layers.last().unwrap();
            for &r in &rows {
                self.head(r, h, &mut probs[r * k..(r + 1) * k]);
            }
            passes.push((pass, rows));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite()) {
            return Err(Error::numerical("non-finite denoiser output", Some(i / k)));
        }
        Ok((CategoricalField::from_rows_unchecked(probs, k), passes))
    }
}

impl Denoiser for MlpDenoiser {
    fn vocab(&self) -> Vocab {
        self.arch.vocab
    }

    fn seq_len(&self) -> usize {
        self.arch.seq_len
    }

    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn predict(&self, z: &TokenSequence, t: f64, vis: &VisibilitySpec) -> Result<CategoricalField> {
        Ok(self.forward(z, t, vis)?.0)
    }
}

impl Differentiable for MlpDenoiser {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_backward(
        &self,
        z: &TokenSequence,
        t: f64,
        vis: &VisibilitySpec,
        loss: &mut LossHook<'_>,
        grad: &mut [f64],
    ) -> Result<()> {
        let (field, passes) = self.forward(z, t, vis)?;
        let row_grads = loss(&field)?;
        if row_grads.is_empty() {
            return Ok(());
        }
        let len = self.arch.seq_len;
        let mut by_row: Vec<Option<&[f64]>> = vec![None; len];
        for g in &row_grads {
            by_row[g.row] = Some(&g.d_logits);
        }
        let k = self.arch.vocab.size();
        let lk = len * k;
        let emb = self.time_embedding(t);
        let offsets = self.trunk_offsets();
        let shapes = self.arch.trunk_shapes();
        let a = self.arch.outputs();
        let last = *self.arch.hidden.last().unwrap();

        for (pass, rows) in &passes {
            let h_last = pass.layers.last().unwrap();
            let mut dh = vec![0.0; last];
            let mut any = false;
            for &r in rows {
                let Some(dl) = by_row[r] else { continue };
                any = true;
                let off = self.head_offset(r);
                for (j, &c) in self.active.iter().enumerate() {
                    let g = dl[c];
                    if g == 0.0 {
                        continue;
                    }
                    let wrow = off + j * last;
                    for i in 0..last {
                        grad[wrow + i] += g * h_last[i];
                        dh[i] += g * self.params[wrow + i];
                    }
                    grad[off + a * last + j] += g;
                }
            }
            if !any {
                continue;
            }
            for li in (0..shapes.len()).rev() {
                let (fan_in, fan_out) = shapes[li];
                let off = offsets[li];
                let h = &pass.layers[li];
                let da: Vec<f64> = dh.iter().zip(h).map(|(d, y)| d * (1.0 - y * y)).collect();
                let boff = off + fan_in * fan_out;
                for o in 0..fan_out {
                    grad[boff + o] += da[o];
                }
                if li == 0 {
                    for (o, &g) in da.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let wrow = off + o * fan_in;
                        for (col, &tok) in z.tokens().iter().enumerate() {
                            if pass.visible[col] {
                                grad[wrow + col * k + tok] += g;
                            }
                        }
                        for (e, &v) in emb.iter().enumerate() {
                            grad[wrow + lk + e] += g * v;
                        }
                    }
                } else {
                    let prev = &pass.layers[li - 1];
                    let mut dprev = vec![0.0; fan_in];
                    for (o, &g) in da.iter().enumerate() {
                        let wrow = off + o * fan_in;
                        for i in 0..fan_in {
                            grad[wrow + i] += g * prev[i];
                            dprev[i] += g * self.params[wrow + i];
                        }
                    }
                    dh = dprev;
                }
            }
        }
        Ok(())
    }
}
