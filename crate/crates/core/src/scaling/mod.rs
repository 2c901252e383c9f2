//! FLOP accounting, IsoFLOP and power-law fits, speed–quality curves, Pareto
//! frontiers and the desk-scale sweep driver.

mod fits;
mod pareto;
mod sweep;

pub use fits::{
    compute_multiplier, fit_curve, fit_isoflop, fit_power_law, fit_speed_quality, invert_quality_for_steps, Curve,
    IsoFit, PowerLawFit, SpeedQualityFit, StepsForTarget, SweepRecord, GAMMA_STARTS,
};
pub use pareto::{pareto_frontier, Frontier, FrontierPoint, ModelCurves};
pub use sweep::{
    analyze_sweep, family_objective, run_isoflop_sweep, steps_for_budget, write_report, FamilyLaws, IsoRow,
    ScalingReport, SkippedCell, SweepOutcome, SweepSpec,
};

use serde::{Deserialize, Serialize};

use crate::denoisers::ModelSpec;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveSpec;
use crate::training::training_flops_per_sequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopCount {
    /// Analytic forward + backward count for the backend.
    pub exact: f64,
    /// The `6 N D` heuristic.
    pub six_nd: f64,
}

/// Training FLOPs for `tokens` training tokens. Shares its code path with the
/// training loop's FLOP counter.
pub fn training_flops(model: &ModelSpec, objective: &ObjectiveSpec, tokens: f64) -> Result<FlopCount> {
    if !(tokens >= 0.0 && tokens.is_finite()) {
        return Err(Error::Validation(format!("token count {tokens} must be finite and non-negative")));
    }
    if let ModelSpec::Mlp(a) = model {
        a.validate()?;
    }
    let per_token = training_flops_per_sequence(model.forward_flops(), objective) / model.seq_len() as f64;
    Ok(FlopCount {
        exact: per_token * tokens,
        six_nd: 6.0 * model.param_count() as f64 * tokens,
    })
}
