use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoisers::{MlpArch, ModelSpec, TabularDenoiser};
use crate::error::{Error, Result};
use crate::objectives::{EsoConfig, ModelFamily, ObjectiveKind, ObjectiveSpec, VisibilityPolicy};
use crate::samplers::{SamplerConfig, SamplerFamily};
use crate::scaling::{family_objective, SweepSpec};
use crate::schedule::NoiseSchedule;
use crate::training::{SyntheticLanguage, TrainConfig};
use crate::vocab::Vocab;

/// Backend section of an experiment; vocabulary and length come from the
/// family and the language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "d_embed")]
        time_embed_dim: usize,
    },
    Tabular {
        #[serde(default = "d_buckets")]
        time_buckets: usize,
    },
}

fn d_embed() -> usize {
    8
}
fn d_buckets() -> usize {
    1
}

/// Objective overrides; everything defaults from the family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Training objective (e.g. `low_var` for a masked model).
    pub kind: Option<ObjectiveKind>,
    pub t_min: Option<f64>,
    pub antithetic: Option<bool>,
    pub visibility: Option<VisibilityPolicy>,
    pub alpha_0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "d_sequences")]
    pub sequences: usize,
    #[serde(default = "d_draws")]
    pub mc_draws: usize,
    #[serde(default = "d_samples")]
    pub samples: usize,
}

fn d_sequences() -> usize {
    256
}
fn d_draws() -> usize {
    8
}
fn d_samples() -> usize {
    256
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sequences: d_sequences(),
            mc_draws: d_draws(),
            samples: d_samples(),
        }
    }
}

/// Sweep section: a [`SweepSpec`] without the seed, plus the families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub families: Vec<ModelFamily>,
    #[serde(flatten)]
    pub spec: SweepSpec,
}

/// One experiment, read from a single TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: ModelFamily,
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "d_schedule")]
    pub schedule: NoiseSchedule,
    pub language: SyntheticLanguage,
    pub model: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn d_schedule() -> NoiseSchedule {
    NoiseSchedule::Linear
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The output directory is left out so that the same experiment written
    /// to two places serializes identically.
    pub fn to_toml(&self) -> Result<String> {
        let placed = Self { out: None, ..self.clone() };
        toml::to_string_pretty(&placed).map_err(|e| Error::Format(e.to_string()))
    }

    /// Make the top-level seed the only source of randomness.
    pub fn sync_seeds(&mut self) {
        if let Some(t) = &mut self.train {
            t.seed = self.seed;
        }
        if let Some(s) = &mut self.sweep {
            s.spec.seed = self.seed;
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync_seeds();
    }

    /// Check every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.language.validate()?;
        self.objective()?.validate()?;
        let spec = self.model_spec()?;
        if let Some(t) = &self.train {
            t.validate()?;
        }
        self.sampler().validate(spec.seq_len())?;
        if self.eval.sequences == 0 || self.eval.mc_draws == 0 || self.eval.samples == 0 {
            return Err(Error::Config("eval: sequences, mc_draws and samples must be positive".into()));
        }
        if let Some(s) = &self.sweep {
            if s.families.is_empty() {
                return Err(Error::Config("sweep.families must be non-empty".into()));
            }
            s.spec.validate()?;
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        let k = self.language.data_tokens();
        if self.family.uses_mask() {
            Vocab::with_mask(k)
        } else {
            Vocab::without_mask(k)
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let vocab = self.vocab()?;
        let seq_len = self.language.seq_len();
        Ok(match &self.model {
            ModelConfig::Mlp { hidden, time_embed_dim } => {
                let arch = MlpArch {
                    vocab,
                    seq_len,
                    hidden: hidden.clone(),
                    time_embed_dim: *time_embed_dim,
                    time_conditioning: self.family.time_conditioned(),
                };
                arch.validate()?;
                ModelSpec::Mlp(arch)
            }
            ModelConfig::Tabular { time_buckets } => {
                TabularDenoiser::entry_count(vocab, seq_len, *time_buckets)?;
                ModelSpec::Tabular {
                    vocab,
                    seq_len,
                    time_buckets: *time_buckets,
                }
            }
        })
    }

    fn eso(&self) -> Result<Option<EsoConfig>> {
        self.objective
            .alpha_0
            .map(|a| {
                let mut e = EsoConfig::new(a)?;
                if let Some(v) = self.objective.visibility {
                    e.visibility = v;
                }
                Ok(e)
            })
            .transpose()
    }

    /// Training objective.
    pub fn objective(&self) -> Result<ObjectiveSpec> {
        let mut spec = family_objective(self.family, self.schedule, self.eso()?);
        let o = &self.objective;
        if let Some(kind) = o.kind {
            let allowed = match self.family {
                ModelFamily::Mdlm => matches!(kind, ObjectiveKind::Mdlm | ObjectiveKind::LowVar),
                f => kind == f.eval_objective(),
            };
            if !allowed {
                return Err(Error::Config(format!(
                    "objective.kind {kind:?} does not apply to family {}",
                    self.family.name()
                )));
            }
            spec.kind = kind;
        }
        if let Some(t) = o.t_min {
            spec.t_min = t;
        }
        if let Some(a) = o.antithetic {
            spec.antithetic = a;
        }
        if self.family != ModelFamily::Eso {
            spec.visibility = o.visibility;
        }
        Ok(spec)
    }

    /// The bound reported by `eval` (the low-variance loss is not a bound).
    pub fn eval_objective(&self) -> Result<ObjectiveSpec> {
        let mut spec = self.objective()?;
        spec.kind = self.family.eval_objective();
        Ok(spec)
    }

    /// Sampler, defaulting by family.
    pub fn sampler(&self) -> SamplerConfig {
        self.sampler.unwrap_or_else(|| {
            let family = match self.family {
                ModelFamily::Ar => SamplerFamily::Ar,
                ModelFamily::Mdlm => SamplerFamily::AncestralMasked,
                ModelFamily::Duo => SamplerFamily::AncestralUniform,
                ModelFamily::Eso => SamplerFamily::EsoBlock,
            };
            let mut s = SamplerConfig::new(family);
            if family == SamplerFamily::EsoBlock {
                s.block_spacing = Some(self.language.seq_len());
            }
            s.schedule = Some(self.schedule);
            s
        })
    }
}
