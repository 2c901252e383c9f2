use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::denoisers::{load_checkpoint, save_checkpoint, Checkpoint, Denoiser, MlpDenoiser, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::evaluation::{eval_nelbo, EvalReport};
use crate::io::{read_csv, write_atomic, write_json, write_table, OutputFormat};
use crate::rng::RngStream;
use crate::samplers::{generate_many, write_traces};
use crate::scaling::{analyze_sweep, pareto_frontier, run_isoflop_sweep, write_report, Frontier, ModelCurves, SweepRecord};
use crate::training::{train, STREAM_INIT};

/// Streams split off the experiment seed by the evaluation commands (the
/// training loop uses 0–3).
const STREAM_EVAL_DATA: u64 = 16;
const STREAM_EVAL_MC: u64 = 17;
const STREAM_SAMPLES: u64 = 18;

pub const CHECKPOINT_FILE: &str = "checkpoint.dlck";
pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Written last into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn note(&mut self, path: &Path) {
        let rel = path.strip_prefix(self.dir).unwrap_or(path);
        self.files.push(rel.to_string_lossy().into_owned());
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.dir.join(name);
        write_json(&p, value)?;
        self.note(&p);
        Ok(())
    }

    fn table<T: Serialize>(&mut self, stem: &str, rows: &[T], format: OutputFormat) -> Result<()> {
        let p = write_table(self.dir, stem, rows, format)?;
        self.note(&p);
        Ok(())
    }

    fn config(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        let p = self.dir.join(CONFIG_FILE);
        write_atomic(&p, cfg.to_toml()?.as_bytes())?;
        self.note(&p);
        Ok(())
    }

    fn finish(self, command: &str, seed: Option<u64>, notes: Vec<String>) -> Result<()> {
        let manifest = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            outputs: self.files,
            notes,
        };
        write_json(self.dir.join(MANIFEST_FILE), &manifest)
    }
}

fn init_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    match spec {
        ModelSpec::Mlp(arch) => Ok(Model::Mlp(MlpDenoiser::new(
            arch.clone(),
            &mut RngStream::new(seed).split(STREAM_INIT),
        )?)),
        ModelSpec::Tabular { .. } => spec.build(vec![0.0; spec.param_count()]),
    }
}

/// Train per the config; writes the checkpoint, the metrics log, the
/// resolved config and the manifest.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, format: OutputFormat) -> Result<()> {
    let train_cfg = cfg
        .train
        .clone()
        .ok_or_else(|| Error::Config("missing section `train`".into()))?;
    let spec = cfg.model_spec()?;
    let objective = cfg.objective()?;
    let mut model = init_model(&spec, cfg.seed)?;
    let log = train(&objective, &mut model, &cfg.language, &train_cfg, |_| Ok(()))?;

    let mut o = Outputs::new(out);
    o.config(cfg)?;
    o.table("metrics", &log, format)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("objective".into(), format!("{:?}", objective.kind));
    metadata.insert("steps".into(), train_cfg.steps.to_string());
    metadata.insert("seed".into(), cfg.seed.to_string());
    let ckpt = Checkpoint {
        model,
        family: cfg.family,
        schedule: cfg.schedule,
        metadata,
    };
    let p = out.join(CHECKPOINT_FILE);
    save_checkpoint(&p, &ckpt)?;
    o.note(&p);
    o.finish("train", Some(cfg.seed), vec![])
}

/// Refuse a checkpoint whose model does not match the configuration; the
/// error lists every differing field.
pub fn check_compatible(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<()> {
    let want = cfg.model_spec()?;
    let have = ckpt.model.spec();
    let mut diff = Vec::new();
    if want.vocab() != have.vocab() {
        diff.push(format!(
            "vocab: checkpoint has {} tokens (mask {:?}), config implies {} (mask {:?})",
            have.vocab().size(),
            have.vocab().mask(),
            want.vocab().size(),
            want.vocab().mask()
        ));
    }
    if want.seq_len() != have.seq_len() {
        diff.push(format!("seq_len: checkpoint {}, config {}", have.seq_len(), want.seq_len()));
    }
    if ckpt.family != cfg.family {
        diff.push(format!("family: checkpoint {}, config {}", ckpt.family.name(), cfg.family.name()));
    }
    if ckpt.schedule != cfg.schedule {
        diff.push(format!("schedule: checkpoint {}, config {}", ckpt.schedule.name(), cfg.schedule.name()));
    }
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::Mismatch(format!("checkpoint does not match config:\n  {}", diff.join("\n  "))))
    }
}

/// Bound, generative perplexity, entropy and sampling cost of a checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    check_compatible(cfg, &ckpt)?;
    let root = RngStream::new(cfg.seed);
    let model = &ckpt.model;
    let mut rng = root.split(STREAM_EVAL_DATA);
    let dataset = (0..cfg.eval.sequences)
        .map(|_| cfg.language.sample_sequence(model.vocab(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let objective = cfg.eval_objective()?;
    let nelbo = eval_nelbo(model, &objective, &dataset, cfg.eval.mc_draws, root.split(STREAM_EVAL_MC).seed())?;
    let traces = generate_many(model, &cfg.sampler(), cfg.eval.samples, root.split(STREAM_SAMPLES).seed())?;
    let samples: Vec<_> = traces.iter().map(|t| t.sample.clone()).collect();
    let mut report = EvalReport::new(objective.kind, nelbo, &samples, &cfg.language)?;
    let n = traces.len() as f64;
    report.mean_nfe = traces.iter().map(|t| t.nfe as f64).sum::<f64>() / n;
    report.mean_modeled_cost = traces.iter().map(|t| t.modeled_cost).sum::<f64>() / n;

    let mut o = Outputs::new(out);
    o.config(cfg)?;
    o.json("eval.json", &report)?;
    o.finish("eval", Some(cfg.seed), vec![report.evaluator.clone()])
}

/// Generation traces (one JSON object per line) from a checkpoint.
pub fn cmd_sample(cfg: &ExperimentConfig, checkpoint: &Path, count: Option<usize>, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    check_compatible(cfg, &ckpt)?;
    let count = count.unwrap_or(cfg.eval.samples);
    if count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let seed = RngStream::new(cfg.seed).split(STREAM_SAMPLES).seed();
    let traces = generate_many(&ckpt.model, &cfg.sampler(), count, seed)?;
    let mut o = Outputs::new(out);
    o.config(cfg)?;
    let p = out.join("traces.jsonl");
    write_traces(&p, &traces)?;
    o.note(&p);
    o.finish("sample", Some(cfg.seed), vec![])
}

/// Run the configured sweep and write its records, skipped cells and fits.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, format: OutputFormat) -> Result<()> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("missing section `sweep`".into()))?;
    let outcome = run_isoflop_sweep(&sweep.families, &sweep.spec, &cfg.language)?;
    let report = analyze_sweep(&outcome.records)?;
    let mut o = Outputs::new(out);
    o.config(cfg)?;
    o.table("sweep_records", &outcome.records, format)?;
    o.json("skipped_cells.json", &outcome.skipped)?;
    write_report(out, &outcome.records, &report, None, format)?;
    for f in ["loss_vs_flops", "isoflop_fits"] {
        o.files.push(format!("{f}.{}", format.extension()));
    }
    o.files.push("scaling_laws.json".into());
    o.finish("sweep", Some(cfg.seed), report.unfitted)
}

/// IsoFLOP and power-law fits of a records CSV.
pub fn cmd_fit(records: &Path, out: &Path, format: OutputFormat) -> Result<()> {
    let rows: Vec<SweepRecord> = read_csv(records)?;
    let report = analyze_sweep(&rows)?;
    let mut o = Outputs::new(out);
    o.table("isoflop_fits", &report.iso, format)?;
    o.json("scaling_laws.json", &report.laws)?;
    o.finish("fit", None, report.unfitted)
}

/// Input of the `pareto` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoInput {
    /// Target generative perplexities.
    pub targets: Vec<f64>,
    pub models: Vec<ModelCurves>,
}

impl ParetoInput {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let input: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if input.models.is_empty() || input.targets.is_empty() {
            return Err(Error::Config("pareto input needs at least one model and one target".into()));
        }
        Ok(input)
    }

    pub fn frontier(&self) -> Frontier {
        pareto_frontier(&self.models, &self.targets)
    }
}

#[derive(Serialize)]
struct FrontierSummary<'a> {
    gaps: &'a [f64],
    /// `(last target of the old winner, first target of the new one)`.
    switches: Vec<(f64, f64)>,
}

/// Pareto frontier of fitted speed–quality curves.
pub fn cmd_pareto(curves: &Path, out: &Path, format: OutputFormat) -> Result<()> {
    let frontier = ParetoInput::load(curves)?.frontier();
    let mut o = Outputs::new(out);
    o.table("frontier", &frontier.points, format)?;
    o.json(
        "frontier_summary.json",
        &FrontierSummary {
            gaps: &frontier.gaps,
            switches: frontier.switches(),
        },
    )?;
    let notes = frontier.gaps.iter().map(|g| format!("no model reaches target {g}")).collect();
    o.finish("pareto", None, notes)
}

/// Plot data for loss-vs-FLOPs, optimal size and (optionally) the frontier.
pub fn cmd_report(records: &Path, curves: Option<&Path>, out: &Path, format: OutputFormat) -> Result<()> {
    let rows: Vec<SweepRecord> = read_csv(records)?;
    let report = analyze_sweep(&rows)?;
    let frontier = curves.map(ParetoInput::load).transpose()?.map(|p| p.frontier());
    write_report(out, &rows, &report, frontier.as_ref(), format)?;
    let mut o = Outputs::new(out);
    for f in ["loss_vs_flops", "isoflop_fits"] {
        o.files.push(format!("{f}.{}", format.extension()));
    }
    o.files.push("scaling_laws.json".into());
    if frontier.is_some() {
        o.files.push(format!("frontier.{}", format.extension()));
        o.files.push("frontier_gaps.json".into());
    }
    o.finish("report", None, report.unfitted)
}
