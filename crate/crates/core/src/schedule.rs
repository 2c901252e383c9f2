use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise schedule `α_t`: the probability that a token is still clean at time `t`.
///
/// * `Linear`: `α_t = 1 − t`, `α'_t = −1`.
/// * `Cosine`: `α_t = cos(πt/2)`, `α'_t = −(π/2) sin(πt/2)`. Monotone
///   non-increasing with `α_0 = 1` and `α_1 = cos(π/2)`, which is zero up to
///   rounding (about 6e−17 in double precision).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    Linear,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleValue {
    pub alpha: f64,
    pub alpha_prime: f64,
}

impl NoiseSchedule {
    /// `(α_t, α'_t)`; fails for `t` outside `[0, 1]`.
    pub fn alpha_at(self, t: f64) -> Result<ScheduleValue> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("t = {t} is outside [0, 1]")));
        }
        Ok(self.eval(t))
    }

    /// Unchecked evaluation for callers that already validated `t`.
    pub(crate) fn eval(self, t: f64) -> ScheduleValue {
        match self {
            NoiseSchedule::Linear => ScheduleValue {
                alpha: 1.0 - t,
                alpha_prime: -1.0,
            },
            NoiseSchedule::Cosine => {
                let half_pi = std::f64::consts::FRAC_PI_2;
                ScheduleValue {
                    alpha: (half_pi * t).cos(),
                    alpha_prime: -half_pi * (half_pi * t).sin(),
                }
            }
        }
    }

    pub fn alpha(self, t: f64) -> f64 {
        self.eval(t).alpha
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseSchedule::Linear => "linear",
            NoiseSchedule::Cosine => "cosine",
        }
    }
}
