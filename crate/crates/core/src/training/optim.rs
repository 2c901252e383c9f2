use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.95
}
fn d_wd() -> f64 {
    0.1
}
fn d_eps() -> f64 {
    1e-8
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: d_beta1(),
            beta2: d_beta2(),
            weight_decay: d_wd(),
            eps: d_eps(),
        }
    }
}

/// AdamW moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; params],
            second_moment: vec![0.0; params],
            step_count: 0,
        }
    }
}

/// One AdamW update with bias-corrected moments and decoupled weight decay
/// `θ ← θ − lr·(m̂ / (√v̂ + ε) + λ θ)`. A non-finite gradient aborts the step
/// and leaves parameters and state untouched.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Mismatch(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite gradient; step aborted", Some(i)));
    }
    let AdamWConfig {
        beta1,
        beta2,
        weight_decay,
        eps,
    } = state.config;
    state.step_count += 1;
    let n = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(n);
    let c2 = 1.0 - beta2.powi(n);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        // −∞ entries (exact zeros in tables) are left alone.
        if p.is_finite() {
            *p -= lr * ((*m / c1) / ((*v / c2).sqrt() + eps) + weight_decay * *p);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Optional linear warmup from 0, then cosine from `peak` to `floor` at
    /// `total_steps`.
    Cosine {
        peak: f64,
        floor: f64,
        #[serde(default)]
        warmup_steps: u64,
        total_steps: u64,
    },
    /// Linear warmup from 0 to `peak`, constant, then a linear decay to
    /// `floor` over the last `decay_steps` steps.
    WarmupConstantDecay {
        peak: f64,
        floor: f64,
        warmup_steps: u64,
        #[serde(default)]
        decay_steps: u64,
        total_steps: u64,
    },
}

impl LrSchedule {
    pub fn cosine(peak: f64, floor: f64, total_steps: u64) -> Self {
        LrSchedule::Cosine {
            peak,
            floor,
            warmup_steps: 0,
            total_steps,
        }
    }

    /// Defaults: peak 4e−4, floor 2e−5.
    pub fn default_cosine(total_steps: u64) -> Self {
        Self::cosine(4e-4, 2e-5, total_steps)
    }

    pub fn total_steps(&self) -> u64 {
        match *self {
            LrSchedule::Cosine { total_steps, .. } | LrSchedule::WarmupConstantDecay { total_steps, .. } => {
                total_steps
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (peak, floor, warm, decay, total) = match *self {
            LrSchedule::Cosine {
                peak,
                floor,
                warmup_steps,
                total_steps,
            } => (peak, floor, warmup_steps, 0, total_steps),
            LrSchedule::WarmupConstantDecay {
                peak,
                floor,
                warmup_steps,
                decay_steps,
                total_steps,
            } => (peak, floor, warmup_steps, decay_steps, total_steps),
        };
        if !(floor >= 0.0 && peak >= floor && peak.is_finite()) {
            return Err(Error::Config(format!("lr schedule needs 0 ≤ floor ≤ peak, got {floor}, {peak}")));
        }
        if total == 0 || warm + decay > total {
            return Err(Error::Config("lr schedule: warmup + decay must fit in total_steps > 0".into()));
        }
        Ok(())
    }

    /// Learning rate at `step`; steps beyond the end clamp to the floor.
    pub fn lr_at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Cosine {
                peak,
                floor,
                warmup_steps,
                total_steps,
            } => {
                if step >= total_steps {
                    return floor;
                }
                if step < warmup_steps {
                    return peak * step as f64 / warmup_steps as f64;
                }
                let span = (total_steps - warmup_steps) as f64;
                let frac = (step - warmup_steps) as f64 / span;
                floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            LrSchedule::WarmupConstantDecay {
                peak,
                floor,
                warmup_steps,
                decay_steps,
                total_steps,
            } => {
                if step >= total_steps {
                    return if decay_steps > 0 { floor } else { peak };
                }
                if step < warmup_steps {
                    return peak * step as f64 / warmup_steps as f64;
                }
                let decay_start = total_steps - decay_steps;
                if step < decay_start {
                    return peak;
                }
                let frac = (step - decay_start) as f64 / decay_steps as f64;
                peak + (floor - peak) * frac
            }
        }
    }
}
