//! Fits of entanglement time series and sector distributions.
//!
//! Sector maps use doubled units throughout: a key `m` stands for `Sz = m/2`
//! or `S = m/2`.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observables::REPORT_THRESHOLD;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no sample at t = {0}")]
    MissingSample(f64),
    #[error("local tangent needs t0 > dt (t0 = {t0}, dt = {dt})")]
    TangentTooEarly { t0: f64, dt: f64 },
    #[error("need at least {need} usable points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-positive value {value} at t = {t}")]
    NonPositive { t: f64, value: f64 },
    #[error("invalid window [{0}, {1}]")]
    BadWindow(f64, f64),
}

type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    LogTangent,
    Gaussian,
    PowerLaw,
    TrialPS,
    Decay,
}

impl FitKind {
    pub fn name(self) -> &'static str {
        match self {
            FitKind::LogTangent => "log_tangent",
            FitKind::Gaussian => "gaussian",
            FitKind::PowerLaw => "power_law",
            FitKind::TrialPS => "trial_pS",
            FitKind::Decay => "decay",
        }
    }
}

impl fmt::Display for FitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: FitKind,
    pub params: Vec<(String, f64)>,
    /// Largest absolute deviation between model and data on the fitted points.
    pub residual: f64,
    /// Time window, or sector range in doubled units, that entered the fit.
    pub window: (f64, f64),
    pub converged: bool,
    pub degenerate: bool,
}

impl FitResult {
    fn new(kind: FitKind, params: &[(&str, f64)], residual: f64, window: (f64, f64)) -> Self {
        Self {
            kind,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            residual,
            window,
            converged: true,
            degenerate: false,
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Least-squares line `y = slope·x + intercept`.
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

fn sample_at(series: &[(f64, f64)], t: f64) -> Result<f64> {
    let tol = 1e-9 * t.abs().max(1.0);
    series
        .iter()
        .find(|(s, _)| (s - t).abs() <= tol)
        .map(|p| p.1)
        .ok_or(AnalysisError::MissingSample(t))
}

/// Line through `(log₂ t, S)` at `t0 − dt`, `t0`, `t0 + dt`; returns the
/// slope `eta` and intercept `s0`.
pub fn fit_log_tangent(series: &[(f64, f64)], t0: f64, dt: f64) -> Result<FitResult> {
    if !(t0 > dt && dt > 0.0) {
        return Err(AnalysisError::TangentTooEarly { t0, dt });
    }
    let ts = [t0 - dt, t0, t0 + dt];
    let ys = ts.iter().map(|&t| sample_at(series, t)).collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = ts.iter().map(|t| t.log2()).collect();
    let (eta, s0) = line_fit(&xs, &ys);
    let residual = xs.iter().zip(&ys).map(|(x, y)| (eta * x + s0 - y).abs()).fold(0.0, f64::max);
    Ok(FitResult::new(FitKind::LogTangent, &[("eta", eta), ("s0", s0)], residual, (ts[0], ts[2])))
}

/// Minimizes `f` over `ln δ ∈ [lo, hi]`: a coarse scan followed by golden
/// section in the best bracket.
fn minimize_log(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const GRID: usize = 400;
    let step = (hi - lo) / GRID as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..=GRID {
        let v = f((lo + step * i as f64).exp());
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = (lo + step * (best + 1) as f64).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
    }
    ((a + b) / 2.0).exp()
}

fn usable(probs: &BTreeMap<i64, f64>) -> Vec<(f64, f64)> {
    probs.iter().filter(|(_, &p)| p > REPORT_THRESHOLD).map(|(&m, &p)| (m as f64 / 2.0, p)).collect()
}

fn window_of(points: &[(f64, f64)]) -> (f64, f64) {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    (2.0 * lo, 2.0 * hi)
}

/// Normalized Gaussian `e^{−Sz²/2δ²}/√(2πδ²)`.
pub fn gaussian_probability(sz: f64, delta: f64) -> f64 {
    (-sz * sz / (2.0 * delta * delta)).exp() / (2.0 * PI * delta * delta).sqrt()
}

/// Trial distribution over spin sectors,
/// `(2S+1)/√(2πδ²)·[e^{−S²/2δ²} − e^{−(S+1)²/2δ²}]`.
pub fn trial_spin_probability(spin: f64, delta: f64) -> f64 {
    let w = |x: f64| (-x * x / (2.0 * delta * delta)).exp();
    (2.0 * spin + 1.0) / (2.0 * PI * delta * delta).sqrt() * (w(spin) - w(spin + 1.0))
}

fn single_param_fit(
    kind: FitKind,
    points: &[(f64, f64)],
    need: usize,
    model: impl Fn(f64, f64) -> f64,
) -> Result<FitResult> {
    if points.len() < need {
        return Err(AnalysisError::TooFewPoints { need, got: points.len() });
    }
    let sse = |delta: f64| points.iter().map(|&(x, p)| (model(x, delta) - p).powi(2)).sum::<f64>();
    let delta = minimize_log(sse, (1e-3f64).ln(), (1e4f64).ln());
    let residual = points.iter().map(|&(x, p)| (model(x, delta) - p).abs()).fold(0.0, f64::max);
    Ok(FitResult::new(kind, &[("delta", delta)], residual, window_of(points)))
}

/// One-parameter Gaussian fit of magnetization-sector probabilities.
pub fn fit_gaussian(probs: &BTreeMap<i64, f64>) -> Result<FitResult> {
    single_param_fit(FitKind::Gaussian, &usable(probs), 3, gaussian_probability)
}

/// One-parameter fit of spin-sector probabilities to the trial distribution.
pub fn fit_trial_ps(probs: &BTreeMap<i64, f64>) -> Result<FitResult> {
    single_param_fit(FitKind::TrialPS, &usable(probs), 2, trial_spin_probability)
}

/// Slope of `ln δ` against `ln t` over samples with `t ∈ [lo, hi]`.
pub fn fit_power_law(series: &[(f64, f64)], window: (f64, f64)) -> Result<FitResult> {
    let (lo, hi) = window;
    if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
        return Err(AnalysisError::BadWindow(lo, hi));
    }
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|(t, _)| *t >= lo && *t <= hi).collect();
    if pts.len() < 4 {
        return Err(AnalysisError::TooFewPoints { need: 4, got: pts.len() });
    }
    if let Some(&(t, value)) = pts.iter().find(|(t, v)| *t <= 0.0 || *v <= 0.0) {
        return Err(AnalysisError::NonPositive { t, value });
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (alpha, ln_pref) = line_fit(&xs, &ys);
    let prefactor = ln_pref.exp();
    let residual = pts.iter().map(|&(t, d)| (prefactor * t.powf(alpha) - d).abs()).fold(0.0, f64::max);
    Ok(FitResult::new(FitKind::PowerLaw, &[("alpha", alpha), ("prefactor", prefactor)], residual, (lo, hi)))
}

const DECAY_MAX_ITER: usize = 200;

fn decay_model(p: &[f64; 3], t: f64) -> f64 {
    (p[0] + p[1] * t).powf(-p[2])
}

/// Log-space residuals `ln model − ln y`, or `None` outside the domain.
fn decay_residuals(p: &[f64; 3], pts: &[(f64, f64)]) -> Option<Vec<f64>> {
    pts.iter()
        .map(|&(t, y)| {
            let base = p[0] + p[1] * t;
            (base > 0.0).then(|| -p[2] * base.ln() - y.ln())
        })
        .collect()
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Solves a 3×3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits `(a + b·t)^{−c}` by Levenberg–Marquardt on logarithmic residuals.
///
/// Seeds: `c` from the log-log slope of the last two points, then `a` and `b`
/// from the first and middle points. The iteration is capped; a capped run
/// is reported with `converged = false`. A flat series is returned as the
/// degenerate branch `c = 0`.
pub fn fit_decay(series: &[(f64, f64)]) -> Result<FitResult> {
    let mut pts: Vec<(f64, f64)> = series.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < 5 {
        return Err(AnalysisError::TooFewPoints { need: 5, got: pts.len() });
    }
    if let Some(&(t, value)) = pts.iter().find(|(_, v)| *v <= 0.0 || !v.is_finite()) {
        return Err(AnalysisError::NonPositive { t, value });
    }
    let window = (pts[0].0, pts[pts.len() - 1].0);
    let ymax = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let flat = |residual: f64| FitResult {
        degenerate: true,
        ..FitResult::new(FitKind::Decay, &[("a", 1.0), ("b", 0.0), ("c", 0.0)], residual, window)
    };
    if ymax - ymin <= 1e-12 * ymax {
        return Ok(flat(pts.iter().map(|p| (p.1 - 1.0).abs()).fold(0.0, f64::max)));
    }

    let n = pts.len();
    let (t1, y1) = pts[n - 2];
    let (t2, y2) = pts[n - 1];
    let c0 = if t1 > 0.0 && t2 > t1 { -(y2.ln() - y1.ln()) / (t2.ln() - t1.ln()) } else { 1.0 };
    let c0 = if c0.is_finite() && c0.abs() > 1e-6 { c0 } else { 1.0 };
    let (tf, yf) = pts[0];
    let (tm, ym) = pts[n / 2];
    let (uf, um) = (yf.powf(-1.0 / c0), ym.powf(-1.0 / c0));
    let b0 = if tm > tf { (um - uf) / (tm - tf) } else { 0.0 };
    let a0 = uf - b0 * tf;
    let mut p = [a0, b0, c0];
    if decay_residuals(&p, &pts).is_none() {
        p = [1.0, 1.0, c0];
    }

    let mut r = decay_residuals(&p, &pts).unwrap_or_else(|| vec![f64::INFINITY; n]);
    let mut cost = sum_sq(&r);
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..DECAY_MAX_ITER {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (i, &(t, _)) in pts.iter().enumerate() {
            let base = p[0] + p[1] * t;
            let j = [-p[2] / base, -p[2] * t / base, -base.ln()];
            for a in 0..3 {
                jtr[a] += j[a] * r[i];
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let grad = jtr.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if grad < 1e-15 || cost < 1e-30 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj;
            for k in 0..3 {
                m[k][k] += mu * jtj[k][k].max(1e-12);
            }
            let Some(step) = solve3(m, [-jtr[0], -jtr[1], -jtr[2]]) else {
                mu *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            if let Some(rt) = decay_residuals(&trial, &pts) {
                let ct = sum_sq(&rt);
                if ct < cost {
                    let rel = step.iter().zip(&p).map(|(s, x)| s.abs() / x.abs().max(1e-12)).fold(0.0, f64::max);
                    p = trial;
                    r = rt;
                    cost = ct;
                    mu = (mu / 3.0).max(1e-15);
                    improved = true;
                    if rel < 1e-14 {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if p[2].abs() < 1e-8 {
        return Ok(flat(pts.iter().map(|q| (q.1 - 1.0).abs()).fold(0.0, f64::max)));
    }
    let residual = pts.iter().map(|&(t, y)| (decay_model(&p, t) - y).abs()).fold(0.0, f64::max);
    let mut fit = FitResult::new(FitKind::Decay, &[("a", p[0]), ("b", p[1]), ("c", p[2])], residual, window);
    fit.converged = converged;
    Ok(fit)
}

/// `log₂ δ + log₂ √(2πe)`, the entropy of a discretized Gaussian of width δ.
pub fn shannon_entropy_gaussian_check(delta: f64) -> f64 {
    delta.log2() + (2.0 * PI * E).sqrt().log2()
}
