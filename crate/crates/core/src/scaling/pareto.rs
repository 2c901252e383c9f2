use serde::{Deserialize, Serialize};

use super::fits::{invert_quality_for_steps, SpeedQualityFit, StepsForTarget};

/// Both fitted curves of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCurves {
    pub name: String,
    #[serde(flatten)]
    pub fit: SpeedQualityFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub target: f64,
    pub throughput: f64,
    pub model: String,
    pub steps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    /// Targets that no model reaches.
    pub gaps: Vec<f64>,
}

impl Frontier {
    /// Targets where the winning model changes, as `(previous target, target)`.
    pub fn switches(&self) -> Vec<(f64, f64)> {
        self.points
            .windows(2)
            .filter(|w| w[0].model != w[1].model)
            .map(|w| (w[0].target, w[1].target))
            .collect()
    }
}

/// For each target quality, the highest throughput any model reaches: steps
/// from inverting the quality curve, throughput from the throughput curve at
/// those steps. Models that cannot reach a target are skipped for it; ties
/// go to the earlier model.
pub fn pareto_frontier(models: &[ModelCurves], targets: &[f64]) -> Frontier {
    let mut out = Frontier::default();
    for &target in targets {
        let mut best: Option<FrontierPoint> = None;
        for m in models {
            let StepsForTarget::Steps(steps) = invert_quality_for_steps(&m.fit.quality, target) else {
                continue;
            };
            let throughput = m.fit.throughput.eval(steps);
            if !throughput.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|b| throughput > b.throughput) {
                best = Some(FrontierPoint {
                    target,
                    throughput,
                    model: m.name.clone(),
                    steps,
                });
            }
        }
        match best {
            Some(p) => out.points.push(p),
            None => out.gaps.push(target),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::Curve;

    fn curve(alpha: f64, beta: f64, gamma: f64) -> Curve {
        Curve {
            alpha,
            beta,
            gamma,
            residual_sum: 0.0,
        }
    }

    #[test]
    fn unreachable_targets_are_gaps() {
        let m = ModelCurves {
            name: "m".into(),
            fit: SpeedQualityFit {
                quality: curve(50.0, 100.0, -1.0),
                throughput: curve(0.0, 10.0, -1.0),
            },
        };
        let f = pareto_frontier(&[m], &[20.0, 30.0]);
        assert!(f.points.is_empty());
        assert_eq!(f.gaps, vec![20.0, 30.0]);
    }
}
