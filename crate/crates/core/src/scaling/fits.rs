use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trained model of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub family: String,
    /// Training FLOPs `C`.
    pub flops: f64,
    /// Parameter count `N`.
    pub params: f64,
    /// Training tokens `D`.
    pub tokens: f64,
    /// Validation loss, nats per token.
    pub val_loss: f64,
}

impl SweepRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.flops > 0.0 && self.params > 0.0 && self.tokens > 0.0 && self.val_loss > 0.0)
            || !self.val_loss.is_finite()
        {
            return Err(Error::Validation(format!("sweep record needs positive finite fields: {self:?}")));
        }
        Ok(())
    }
}

/// `log L = a (log N)² + b log N + c` at one compute budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Whether `a > 0`, i.e. the parabola has an interior minimum.
    pub interior: bool,
    /// `exp(−b / 2a)` when `interior`.
    pub n_star: Option<f64>,
    /// `exp(c − b² / 4a)` when `interior`.
    pub loss_star: Option<f64>,
    pub residual_sum: f64,
}

/// Solve the square system `m · x = r` by Gaussian elimination with partial
/// pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Result<Vec<f64>> {
    let n = r.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col].abs() < 1e-300 {
            return Err(Error::Degenerate("singular least-squares system".into()));
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (r[row] - s) / m[row][row];
    }
    Ok(x)
}

/// Least-squares polynomial of degree `deg` through `(x, y)`, fitted on
/// centred abscissae for conditioning; coefficients in ascending order of the
/// *uncentred* variable.
fn polyfit(x: &[f64], y: &[f64], deg: usize) -> Result<Vec<f64>> {
    let n = deg + 1;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let u: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mut m = vec![vec![0.0; n]; n];
    let mut r = vec![0.0; n];
    for (ui, yi) in u.iter().zip(y) {
        let pows: Vec<f64> = (0..n).map(|p| ui.powi(p as i32)).collect();
        for i in 0..n {
            for j in 0..n {
                m[i][j] += pows[i] * pows[j];
            }
            r[i] += pows[i] * yi;
        }
    }
    let cu = solve(m, r)?;
    // Expand Σ cu_k (x − mean)^k.
    let mut out = vec![0.0; n];
    for (k, ck) in cu.iter().enumerate() {
        let mut binom = 1.0;
        for j in 0..=k {
            out[j] += ck * binom * (-mean).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    Ok(out)
}

/// Quadratic fit of `log loss` against `log N` at one budget.
pub fn fit_isoflop(records: &[SweepRecord]) -> Result<IsoFit> {
    for r in records {
        r.validate()?;
    }
    let mut distinct: Vec<f64> = records.iter().map(|r| r.params).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Validation(format!(
            "IsoFLOP fit needs ≥ 3 distinct model sizes, got {}",
            distinct.len()
        )));
    }
    let x: Vec<f64> = records.iter().map(|r| r.params.ln()).collect();
    let y: Vec<f64> = records.iter().map(|r| r.val_loss.ln()).collect();
    let coef = polyfit(&x, &y, 2)?;
    let (c, b, a) = (coef[0], coef[1], coef[2]);
    let residual_sum = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| (a * xi * xi + b * xi + c - yi).powi(2))
        .sum();
    let interior = a > 0.0;
    Ok(IsoFit {
        a,
        b,
        c,
        interior,
        n_star: interior.then(|| (-b / (2.0 * a)).exp()),
        loss_star: interior.then(|| (c - b * b / (4.0 * a)).exp()),
        residual_sum,
    })
}

/// `log y = exponent · log C + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub intercept: f64,
    pub residual_sum: f64,
}

impl PowerLawFit {
    pub fn predict(&self, c: f64) -> f64 {
        (self.intercept + self.exponent * c.ln()).exp()
    }

    /// The `C` at which the law reaches `y`.
    pub fn invert(&self, y: f64) -> f64 {
        ((y.ln() - self.intercept) / self.exponent).exp()
    }
}

/// Ordinary least squares in log–log space.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::Validation("power-law fit needs ≥ 2 points".into()));
    }
    if points.iter().any(|&(c, y)| !(c > 0.0 && y > 0.0 && c.is_finite() && y.is_finite())) {
        return Err(Error::Validation("power-law fit needs positive finite values".into()));
    }
    let n = points.len() as f64;
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residual_sum = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (exponent * a + intercept - b).powi(2))
        .sum();
    Ok(PowerLawFit {
        exponent,
        intercept,
        residual_sum,
    })
}

/// Ratio `C_a / C_b` of the budgets two fitted laws need to reach `loss`.
pub fn compute_multiplier(a: &PowerLawFit, b: &PowerLawFit, loss: f64) -> f64 {
    a.invert(loss) / b.invert(loss)
}

/// `f(T) = alpha + beta · T^gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub residual_sum: f64,
}

impl Curve {
    pub fn eval(&self, t: f64) -> f64 {
        self.alpha + self.beta * t.powf(self.gamma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedQualityFit {
    /// Generative perplexity against steps.
    pub quality: Curve,
    /// Throughput against steps.
    pub throughput: Curve,
}

/// Initial exponents of the multi-start search.
pub const GAMMA_STARTS: [f64; 5] = [-2.0, -1.5, -1.0, -0.5, -0.25];

fn residuals(points: &[(f64, f64)], p: [f64; 3]) -> f64 {
    points
        .iter()
        .map(|&(t, y)| (p[0] + p[1] * t.powf(p[2]) - y).powi(2))
        .sum()
}

/// Levenberg–Marquardt on `α + β T^γ` from one start.
fn levenberg_marquardt(points: &[(f64, f64)], mut p: [f64; 3]) -> Option<[f64; 3]> {
    let mut lambda = 1e-3;
    let mut cost = residuals(points, p);
    if !cost.is_finite() {
        return None;
    }
    for _ in 0..2000 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(t, y) in points {
            let tg = t.powf(p[2]);
            let r = p[0] + p[1] * tg - y;
            let j = [1.0, tg, p[1] * tg * t.ln()];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
                jtr[a] += j[a] * r;
            }
        }
        let mut improved = false;
        for _ in 0..50 {
            let m: Vec<Vec<f64>> = (0..3)
                .map(|a| (0..3).map(|b| jtj[a][b] + if a == b { lambda * jtj[a][a].max(1e-12) } else { 0.0 }).collect())
                .collect();
            let Ok(step) = solve(m, jtr.iter().map(|v| -v).collect()) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let c = residuals(points, cand);
            if c.is_finite() && c <= cost {
                let rel = step.iter().zip(&p).map(|(s, v)| s.abs() / (v.abs() + 1e-12)).fold(0.0, f64::max);
                p = cand;
                let done = cost - c <= 1e-30 + 1e-20 * cost || rel < 1e-15;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if done {
                    return Some(p);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            return Some(p);
        }
    }
    Some(p)
}

/// Fit `α + β T^γ` by multi-start Levenberg–Marquardt: for each `γ₀` in
/// [`GAMMA_STARTS`], start from `α₀ = min(y) − 1` with `β₀` the least-squares
/// optimum given `(α₀, γ₀)`; the lowest residual wins.
pub fn fit_curve(points: &[(f64, f64)]) -> Result<Curve> {
    let mut ts: Vec<f64> = points.iter().map(|p| p.0).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if ts.len() < 4 {
        return Err(Error::Validation(format!("curve fit needs ≥ 4 distinct T, got {}", ts.len())));
    }
    if points.iter().any(|&(t, y)| !(t > 0.0 && y.is_finite())) {
        return Err(Error::Validation("curve fit needs T > 0 and finite values".into()));
    }
    let alpha0 = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - 1.0;
    let mut best: Option<([f64; 3], f64)> = None;
    let mut tried = Vec::new();
    for &g in &GAMMA_STARTS {
        let (num, den) = points.iter().fold((0.0, 0.0), |(n, d), &(t, y)| {
            let tg = t.powf(g);
            (n + tg * (y - alpha0), d + tg * tg)
        });
        let start = [alpha0, num / den, g];
        if let Some(p) = levenberg_marquardt(points, start) {
            let r = residuals(points, p);
            tried.push(r);
            if r.is_finite() && best.is_none_or(|(_, br)| r < br) {
                best = Some((p, r));
            }
        }
    }
    let (p, r) = best.ok_or_else(|| {
        Error::numerical(format!("curve fit failed from every start; residuals {tried:?}"), None)
    })?;
    Ok(Curve {
        alpha: p[0],
        beta: p[1],
        gamma: p[2],
        residual_sum: r,
    })
}

pub fn fit_speed_quality(quality: &[(f64, f64)], throughput: &[(f64, f64)]) -> Result<SpeedQualityFit> {
    Ok(SpeedQualityFit {
        quality: fit_curve(quality)?,
        throughput: fit_curve(throughput)?,
    })
}

/// Steps needed for a target quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "steps", rename_all = "snake_case")]
pub enum StepsForTarget {
    Steps(f64),
    /// The target lies at or beyond the fitted asymptote.
    Unreachable,
}

/// `T = ((target − α) / β)^{1/γ}`.
pub fn invert_quality_for_steps(fit: &Curve, target: f64) -> StepsForTarget {
    let ratio = (target - fit.alpha) / fit.beta;
    if !(ratio > 0.0) || fit.gamma == 0.0 {
        return StepsForTarget::Unreachable;
    }
    let t = ratio.powf(1.0 / fit.gamma);
    if t.is_finite() {
        StepsForTarget::Steps(t)
    } else {
        StepsForTarget::Unreachable
    }
}
