use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fits::{fit_isoflop, fit_power_law, PowerLawFit, SweepRecord};
use super::pareto::Frontier;
use crate::denoisers::{MlpArch, MlpDenoiser, Model};
use crate::error::{Error, Result};
use crate::evaluation::eval_nelbo;
use crate::io::{write_json, write_table, OutputFormat};
use crate::objectives::{EsoConfig, ModelFamily, ObjectiveKind, ObjectiveSpec};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::training::{train, training_flops_per_sequence, LrSchedule, SyntheticLanguage, TrainConfig, STREAM_INIT};
use crate::vocab::{TokenSequence, Vocab};

/// Relative tolerance between a budget and the FLOPs actually spent.
pub const BUDGET_TOLERANCE: f64 = 0.02;

/// Stream (off the sweep seed) for the held-out evaluation set.
const STREAM_EVAL: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Compute budgets `C` in FLOPs.
    pub budgets: Vec<f64>,
    /// Model-size grid: hidden widths per trunk layer.
    pub sizes: Vec<Vec<usize>>,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_embed")]
    pub time_embed_dim: usize,
    #[serde(default = "d_schedule")]
    pub schedule: NoiseSchedule,
    /// Eso-LM settings (used by the `eso` family).
    #[serde(default)]
    pub eso: Option<EsoConfig>,
    #[serde(default = "d_peak")]
    pub peak_lr: f64,
    #[serde(default = "d_floor")]
    pub floor_lr: f64,
    #[serde(default = "d_eval")]
    pub eval_sequences: usize,
    #[serde(default = "d_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_batch() -> usize {
    32
}
fn d_embed() -> usize {
    8
}
fn d_schedule() -> NoiseSchedule {
    NoiseSchedule::Linear
}
fn d_peak() -> f64 {
    4e-4
}
fn d_floor() -> f64 {
    2e-5
}
fn d_eval() -> usize {
    256
}
fn d_draws() -> usize {
    8
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.sizes.is_empty() {
            return Err(Error::Config("sweep: budgets and sizes must be non-empty".into()));
        }
        if self.budgets.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Config("sweep: budgets must be positive and finite".into()));
        }
        if self.batch_size == 0 || self.eval_sequences == 0 || self.mc_draws == 0 {
            return Err(Error::Config("sweep: batch_size, eval_sequences and mc_draws must be positive".into()));
        }
        if !(self.floor_lr >= 0.0 && self.peak_lr >= self.floor_lr) {
            return Err(Error::Config("sweep: need 0 ≤ floor_lr ≤ peak_lr".into()));
        }
        Ok(())
    }
}

/// The training objective a family is swept with.
pub fn family_objective(family: ModelFamily, schedule: NoiseSchedule, eso: Option<EsoConfig>) -> ObjectiveSpec {
    let kind = match family {
        ModelFamily::Ar => ObjectiveKind::Ar,
        ModelFamily::Mdlm => ObjectiveKind::Mdlm,
        ModelFamily::Duo => ObjectiveKind::Duo,
        ModelFamily::Eso => ObjectiveKind::Eso,
    };
    let spec = ObjectiveSpec::new(kind, schedule);
    match (family, eso) {
        (ModelFamily::Eso, Some(e)) => spec.with_eso(e),
        _ => spec,
    }
}

/// Whole optimizer steps spending `budget` at `per_step` FLOPs each, or
/// `None` when no whole number of steps lands within [`BUDGET_TOLERANCE`].
pub fn steps_for_budget(budget: f64, per_step: f64) -> Option<u64> {
    let steps = (budget / per_step).round();
    if steps < 1.0 || ((steps * per_step - budget) / budget).abs() > BUDGET_TOLERANCE {
        return None;
    }
    Some(steps as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub family: String,
    pub flops: f64,
    pub params: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub skipped: Vec<SkippedCell>,
}

fn arch_for(family: ModelFamily, language: &SyntheticLanguage, hidden: &[usize], embed: usize) -> Result<MlpArch> {
    let k = language.data_tokens();
    let vocab = if family.uses_mask() {
        Vocab::with_mask(k)?
    } else {
        Vocab::without_mask(k)?
    };
    let arch = MlpArch {
        vocab,
        seq_len: language.seq_len(),
        hidden: hidden.to_vec(),
        time_embed_dim: embed,
        time_conditioning: family.time_conditioned(),
    };
    arch.validate()?;
    Ok(arch)
}

/// Train every `(family, budget, size)` cell and record its evaluation bound.
///
/// Each cell spends its budget in whole batches (the number of tokens `D` is
/// solved from the exact per-sequence cost) and is recorded under its nominal
/// budget. All cells of a family share the training data stream and one
/// held-out evaluation set, so differences between cells come from size and
/// budget rather than from data noise. Cells run in parallel; the result
/// order (family, budget, size) and every value are independent of
/// scheduling.
pub fn run_isoflop_sweep(
    families: &[ModelFamily],
    spec: &SweepSpec,
    language: &SyntheticLanguage,
) -> Result<SweepOutcome> {
    spec.validate()?;
    language.validate()?;
    let root = RngStream::new(spec.seed);
    let mut cells = Vec::new();
    for (fi, &family) in families.iter().enumerate() {
        for &budget in &spec.budgets {
            for hidden in &spec.sizes {
                cells.push((fi, family, budget, hidden.clone()));
            }
        }
    }
    let eval_sets: Vec<Vec<TokenSequence>> = families
        .iter()
        .map(|&family| {
            let arch = arch_for(family, language, &spec.sizes[0], spec.time_embed_dim)?;
            let mut rng = root.split(STREAM_EVAL);
            (0..spec.eval_sequences)
                .map(|_| language.sample_sequence(arch.vocab, &mut rng))
                .collect()
        })
        .collect::<Result<_>>()?;

    let results: Vec<std::result::Result<SweepRecord, SkippedCell>> = cells
        .par_iter()
        .map(|(fi, family, budget, hidden)| -> Result<_> {
            let arch = arch_for(*family, language, hidden, spec.time_embed_dim)?;
            let params = arch.param_count() as f64;
            let objective = family_objective(*family, spec.schedule, spec.eso);
            let per_step =
                training_flops_per_sequence(arch.forward_flops(crate::denoisers::VisibilityMode::Bidirectional), &objective)
                    * spec.batch_size as f64;
            let skip = |reason: String| SkippedCell {
                family: family.name().into(),
                flops: *budget,
                params,
                reason,
            };
            let Some(steps) = steps_for_budget(*budget, per_step) else {
                return Ok(Err(skip(format!(
                    "budget {budget:.3e} is not reachable within {:.0}% in whole batches of {per_step:.3e} FLOPs",
                    BUDGET_TOLERANCE * 100.0
                ))));
            };
            let train_seed = root.split(*fi as u64).seed();
            let mut model = Model::Mlp(MlpDenoiser::new(arch, &mut RngStream::new(train_seed).split(STREAM_INIT))?);
            let mut config = TrainConfig::new(steps, spec.batch_size, train_seed);
            config.lr = Some(LrSchedule::cosine(spec.peak_lr, spec.floor_lr, steps));
            let log = match train(&objective, &mut model, language, &config, |_| Ok(())) {
                Ok(log) => log,
                Err(e @ Error::Numerical { .. }) => return Ok(Err(skip(format!("training failed: {e}")))),
                Err(e) => return Err(e),
            };
            let eval_spec = family_objective(*family, spec.schedule, spec.eso);
            let nelbo = eval_nelbo(&model, &eval_spec, &eval_sets[*fi], spec.mc_draws, root.split(STREAM_EVAL).seed())?;
            let last = log.last().expect("at least one step");
            Ok(Ok(SweepRecord {
                family: family.name().into(),
                flops: *budget,
                params,
                tokens: last.tokens as f64,
                val_loss: nelbo.per_token,
            }))
        })
        .collect::<Result<_>>()?;

    let mut out = SweepOutcome::default();
    for r in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

/// One IsoFLOP fit, flattened for tabular output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoRow {
    pub family: String,
    pub flops: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub interior: bool,
    pub n_star: Option<f64>,
    pub loss_star: Option<f64>,
    pub points: usize,
}

/// Compute-optimal power laws of one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyLaws {
    pub family: String,
    /// `L*(C)`.
    pub loss: Option<PowerLawFit>,
    /// `N*(C)`.
    pub params: Option<PowerLawFit>,
    /// Why a law could not be fitted, if so.
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub iso: Vec<IsoRow>,
    pub laws: Vec<FamilyLaws>,
    /// Groups that could not be fitted, with the reason.
    pub unfitted: Vec<String>,
}

/// IsoFLOP fits per `(family, budget)` and power laws per family over the
/// budgets with an interior optimum.
pub fn analyze_sweep(records: &[SweepRecord]) -> Result<ScalingReport> {
    let mut groups: BTreeMap<(String, u64), Vec<SweepRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        groups.entry((r.family.clone(), r.flops.to_bits())).or_default().push(r.clone());
    }
    let mut report = ScalingReport::default();
    let mut per_family: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut keys: Vec<_> = groups.keys().cloned().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(f64::from_bits(a.1).total_cmp(&f64::from_bits(b.1))));
    for key in keys {
        let group = &groups[&key];
        let flops = f64::from_bits(key.1);
        per_family.entry(key.0.clone()).or_default();
        match fit_isoflop(group) {
            Ok(fit) => {
                if let (Some(n), Some(l)) = (fit.n_star, fit.loss_star) {
                    per_family.get_mut(&key.0).unwrap().push((flops, n, l));
                }
                report.iso.push(IsoRow {
                    family: key.0.clone(),
                    flops,
                    a: fit.a,
                    b: fit.b,
                    c: fit.c,
                    interior: fit.interior,
                    n_star: fit.n_star,
                    loss_star: fit.loss_star,
                    points: group.len(),
                });
            }
            Err(e) => report.unfitted.push(format!("{} at C = {flops:.3e}: {e}", key.0)),
        }
    }
    for (family, optima) in per_family {
        let loss_pts: Vec<(f64, f64)> = optima.iter().map(|o| (o.0, o.2)).collect();
        let param_pts: Vec<(f64, f64)> = optima.iter().map(|o| (o.0, o.1)).collect();
        let (loss, params, note) = match (fit_power_law(&loss_pts), fit_power_law(&param_pts)) {
            (Ok(l), Ok(p)) => (Some(l), Some(p), None),
            (l, p) => {
                let msg = l.as_ref().err().or(p.as_ref().err()).map(|e| e.to_string());
                (l.ok(), p.ok(), msg)
            }
        };
        report.laws.push(FamilyLaws {
            family,
            loss,
            params,
            note,
        });
    }
    Ok(report)
}

/// Write the data behind loss-vs-FLOPs, optimal-size-vs-FLOPs and frontier
/// plots into `dir`.
pub fn write_report(
    dir: impl AsRef<Path>,
    records: &[SweepRecord],
    report: &ScalingReport,
    frontier: Option<&Frontier>,
    format: OutputFormat,
) -> Result<()> {
    let dir = dir.as_ref();
    write_table(dir, "loss_vs_flops", records, format)?;
    write_table(dir, "isoflop_fits", &report.iso, format)?;
    write_json(dir.join("scaling_laws.json"), &report.laws)?;
    if let Some(f) = frontier {
        write_table(dir, "frontier", &f.points, format)?;
        write_json(dir.join("frontier_gaps.json"), &f.gaps)?;
    }
    Ok(())
}
