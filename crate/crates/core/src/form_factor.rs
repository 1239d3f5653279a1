//! Singular form factor, ramp fitting and Thouless-time extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{binomial, logspace, solve_small, NeumaierSum};
use crate::sampler::Mode;

/// Filter width used for the dense `N = 26` non-Hermitian model.
pub const REFERENCE_ALPHA: f64 = 3.27;
pub const REFERENCE_ALPHA_N: usize = 26;

/// Default fractional-error threshold for the Thouless time.
pub const THOULESS_THRESHOLD: f64 = 0.20;
/// Grid points after a candidate that must also stay below threshold.
pub const THOULESS_HOLD_POINTS: usize = 5;

/// Half-width of the moving geometric mean used to locate dip and plateau.
const SMOOTHING_HALF_WIDTH: usize = 3;
/// The dip must sit at least this factor below the plateau.
const MIN_DIP_DEPTH: f64 = 2.0;
/// Plateau onset: first post-dip point whose smoothed value reaches this fraction of the plateau.
const PLATEAU_ONSET_FRACTION: f64 = 0.9;
/// Accepted log-log slope of the curve across the ramp window.
const RAMP_LOG_SLOPE_RANGE: (f64, f64) = (0.6, 1.4);
const MIN_RAMP_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpacing {
    Log,
    Linear,
}

/// Strictly increasing evaluation times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    spacing: GridSpacing,
}

impl TimeGrid {
    /// `count ≥ 50` log-spaced points on `[t_min, t_max]`, `t_min > 0`.
    pub fn log(t_min: f64, t_max: f64, count: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
            return Err(invalid(format!("log grid needs 0 < t_min < t_max, got [{t_min}, {t_max}]")));
        }
        if count < 50 {
            return Err(invalid(format!("log grid needs at least 50 points, got {count}")));
        }
        Ok(TimeGrid {
            points: logspace(t_min, t_max, count),
            spacing: GridSpacing::Log,
        })
    }

    /// `count ≥ 3` evenly spaced points on `[t_min, t_max]`, `t_min ≥ 0`.
    pub fn linear(t_min: f64, t_max: f64, count: usize) -> Result<Self> {
        if !(t_min >= 0.0 && t_max > t_min && t_max.is_finite()) {
            return Err(invalid(format!("linear grid needs 0 ≤ t_min < t_max, got [{t_min}, {t_max}]")));
        }
        if count < 3 {
            return Err(invalid(format!("linear grid needs at least 3 points, got {count}")));
        }
        let step = (t_max - t_min) / (count - 1) as f64;
        Ok(TimeGrid {
            points: (0..count)
                .map(|i| if i == count - 1 { t_max } else { t_min + step * i as f64 })
                .collect(),
            spacing: GridSpacing::Linear,
        })
    }

    /// 400 log-spaced points from `1e-2` to `1e6`.
    pub fn default_log() -> Self {
        TimeGrid::log(1e-2, 1e6, 400).expect("valid default grid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> GridSpacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn t_min(&self) -> f64 {
        self.points[0]
    }

    pub fn t_max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Step of a linear grid.
    pub fn step(&self) -> Option<f64> {
        match self.spacing {
            GridSpacing::Linear => Some(self.points[1] - self.points[0]),
            GridSpacing::Log => None,
        }
    }
}

/// Ensemble metadata carried into exports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveMeta {
    pub n: usize,
    pub p: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormFactorCurve {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    /// Gaussian filter width; `0` is the unfiltered form factor.
    pub alpha: f64,
    pub n_realizations: usize,
    pub meta: Option<CurveMeta>,
}

/// Expected `⟨σ²⟩ = Tr(H†H)/L` of the dense model: each of the `C(N,4)`
/// terms contributes `(⟨J²⟩ + ⟨M²⟩)/16`.
pub fn expected_mean_square(n: usize, mode: Mode) -> f64 {
    let nf = n as f64;
    binomial(n as u64, 4) * mode.components() as f64 * 6.0 / nf.powi(3) / 16.0
}

/// Filter width for size `n`: the `N = 26` value rescaled by `1/⟨σ²⟩`.
pub fn default_alpha(n: usize, mode: Mode) -> f64 {
    REFERENCE_ALPHA * expected_mean_square(REFERENCE_ALPHA_N, Mode::NonHermitian) / expected_mean_square(n, mode)
}

/// `|Y(α,t)|² / |Y(α,0)|²` for one spectrum at every grid time, with
/// `Y(α,t) = Σ_n exp(−α σ_n²) exp(−i σ_n t)`.
pub fn filtered_form_factor(levels: &[f64], grid: &TimeGrid, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) {
        return Err(invalid(format!("alpha must be non-negative, got {alpha}")));
    }
    if levels.is_empty() {
        return Err(invalid("empty spectrum"));
    }
    let weights: Vec<f64> = levels.iter().map(|s| (-alpha * s * s).exp()).collect();
    let norm: f64 = weights.iter().sum();
    if !(norm > 0.0) {
        return Err(invalid("filter weights vanish; alpha is too large for this spectrum"));
    }
    let inv = 1.0 / (norm * norm);
    Ok(grid
        .points()
        .iter()
        .map(|&t| {
            let (mut re, mut im) = (0.0, 0.0);
            for (&s, &w) in levels.iter().zip(&weights) {
                let (sin, cos) = (s * t).sin_cos();
                re += w * cos;
                im -= w * sin;
            }
            (re * re + im * im) * inv
        })
        .collect())
}

/// Ensemble-averaged filtered form factor (average of per-realization ratios).
pub fn sigma_ff<S: AsRef<[f64]> + Sync>(
    spectra: &[S],
    grid: &TimeGrid,
    alpha: f64,
) -> Result<FormFactorCurve> {
    if spectra.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    let dim = spectra[0].as_ref().len();
    if let Some(bad) = spectra.iter().find(|s| s.as_ref().len() != dim) {
        return Err(invalid(format!(
            "spectrum dimensions differ: {} vs {dim}",
            bad.as_ref().len()
        )));
    }
    let per_realization = spectra
        .par_iter()
        .map(|s| filtered_form_factor(s.as_ref(), grid, alpha))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![NeumaierSum::default(); grid.len()];
    for curve in &per_realization {
        for (a, v) in acc.iter_mut().zip(curve) {
            a.add(*v);
        }
    }
    let n = spectra.len() as f64;
    Ok(FormFactorCurve {
        grid: grid.clone(),
        values: acc.iter().map(|a| a.value() / n).collect(),
        alpha,
        n_realizations: spectra.len(),
        meta: None,
    })
}

impl FormFactorCurve {
    pub fn with_meta(mut self, meta: CurveMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    /// Moving geometric mean over `2·3 + 1` grid points (truncated at the ends).
    pub fn smoothed(&self) -> Vec<f64> {
        geometric_smooth(&self.values, SMOOTHING_HALF_WIDTH)
    }

    /// Mean over the last 10% of the grid (at least 5 points).
    pub fn plateau_level(&self) -> f64 {
        let k = (self.values.len() / 10).max(5).min(self.values.len());
        let tail = &self.values[self.values.len() - k..];
        tail.iter().sum::<f64>() / k as f64
    }

    /// Index of the smoothed minimum.
    pub fn dip_index(&self) -> usize {
        let s = self.smoothed();
        s.iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc })
            .0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.meta {
            out.push_str(&format!("# N={} p={} mode={}\n", m.n, m.p, m.mode));
        }
        out.push_str(&format!("# alpha={} n_realizations={}\n", self.alpha, self.n_realizations));
        out.push_str("t,value\n");
        for (t, v) in self.grid.points().iter().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

impl FormFactorCurve {
    /// JSON manifest describing the curve and, when given, the ramp window
    /// and Thouless threshold used on it.
    pub fn manifest_json(&self, ramp: Option<&RampFit>, threshold: Option<f64>) -> String {
        let value = serde_json::json!({
            "alpha": self.alpha,
            "n": self.meta.map(|m| m.n),
            "p": self.meta.map(|m| m.p),
            "mode": self.meta.map(|m| m.mode),
            "n_realizations": self.n_realizations,
            "grid": {
                "spacing": self.grid.spacing(),
                "t_min": self.grid.t_min(),
                "t_max": self.grid.t_max(),
                "count": self.grid.len(),
            },
            "threshold": threshold,
            "window": ramp,
        });
        serde_json::to_string_pretty(&value).expect("manifest values are finite or null")
    }
}

fn geometric_smooth(values: &[f64], half: usize) -> Vec<f64> {
    let logs: Vec<f64> = values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    (0..logs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(logs.len());
            (logs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64).exp()
        })
        .collect()
}

/// Through-origin linear ramp `σ_ramp(t) = slope · t` and the window it was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RampFit {
    pub slope: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub t_dip: f64,
    pub t_plateau: f64,
    pub dip_level: f64,
    pub plateau_level: f64,
    pub n_points: usize,
    /// Least-squares log-log slope across the window.
    pub log_slope: f64,
}

impl RampFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.slope * t
    }

    /// Decades spanned by the fit window.
    pub fn decades(&self) -> f64 {
        (self.t_hi / self.t_lo).log10()
    }
}

/// Fits `σ_ramp(t) = m t` on `[3 t_dip, t_plateau / 3]`.
///
/// The dip is the smoothed minimum, the plateau level the late-time mean,
/// and the plateau onset the first post-dip time where the smoothed curve
/// reaches 90% of that level. Curves without a dip at least a factor 2 below
/// the plateau, with fewer than 5 window points, or whose log-log slope in
/// the window lies outside `[0.6, 1.4]` have no ramp.
pub fn fit_ramp(curve: &FormFactorCurve) -> Result<RampFit> {
    let t = curve.grid.points();
    let y = &curve.values;
    let s = curve.smoothed();
    let plateau_level = curve.plateau_level();
    let dip = curve.dip_index();
    let dip_level = s[dip];
    if dip_level * MIN_DIP_DEPTH > plateau_level {
        return Err(Error::NoRamp(format!(
            "dip {dip_level:.3e} is not below half the plateau {plateau_level:.3e}"
        )));
    }
    let onset = (dip..s.len())
        .find(|&i| s[i] >= PLATEAU_ONSET_FRACTION * plateau_level)
        .ok_or_else(|| Error::NoRamp("curve never reaches its plateau".into()))?;
    let (t_dip, t_plateau) = (t[dip], t[onset]);
    let (t_lo, t_hi) = (3.0 * t_dip, t_plateau / 3.0);
    let window: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= t_lo && t[i] <= t_hi).collect();
    if window.len() < MIN_RAMP_POINTS {
        return Err(Error::NoRamp(format!(
            "window [{t_lo:.3e}, {t_hi:.3e}] holds {} grid points",
            window.len()
        )));
    }
    let (mut ty, mut tt) = (0.0, 0.0);
    for &i in &window {
        ty += t[i] * y[i];
        tt += t[i] * t[i];
    }
    let slope = ty / tt;
    let log_slope = log_log_slope(window.iter().map(|&i| (t[i], y[i])));
    if !(RAMP_LOG_SLOPE_RANGE.0..=RAMP_LOG_SLOPE_RANGE.1).contains(&log_slope) {
        return Err(Error::NoRamp(format!("log-log slope {log_slope:.3} in the window is not linear")));
    }
    Ok(RampFit {
        slope,
        t_lo: t[window[0]],
        t_hi: t[window[window.len() - 1]],
        t_dip,
        t_plateau,
        dip_level,
        plateau_level,
        n_points: window.len(),
        log_slope,
    })
}

fn log_log_slope(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points.map(|(t, y)| (t.ln(), y.max(f64::MIN_POSITIVE).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Fractional deviation `ε(t) = |σFF(t) − σ_ramp(t)| / σ_ramp(t)` on the grid.
pub fn fractional_error(curve: &FormFactorCurve, ramp: &RampFit) -> Vec<f64> {
    curve
        .grid
        .points()
        .iter()
        .zip(&curve.values)
        .map(|(&t, &v)| {
            let r = ramp.eval(t);
            (v - r).abs() / r
        })
        .collect()
}

/// Earliest post-dip grid time where `ε ≤ threshold` and stays there for the
/// next [`THOULESS_HOLD_POINTS`] points.
pub fn thouless_time(curve: &FormFactorCurve, ramp: &RampFit, threshold: f64) -> Result<f64> {
    let eps = fractional_error(curve, ramp);
    let dip = curve.dip_index();
    let t = curve.grid.points();
    (dip + 1..eps.len().saturating_sub(THOULESS_HOLD_POINTS))
        .find(|&i| eps[i..=i + THOULESS_HOLD_POINTS].iter().all(|&e| e <= threshold))
        .map(|i| t[i])
        .ok_or(Error::NoThoulessTime { threshold })
}

/// `t_Th ≈ a / p^b + c` fitted on log residuals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThoulessFit {
    pub points: Vec<(f64, f64)>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub threshold: f64,
    /// RMS of `ln t_Th − ln(a/p^b + c)`.
    pub rms_log_residual: f64,
    pub iterations: usize,
}

impl ThoulessFit {
    pub fn eval(&self, p: f64) -> f64 {
        self.a * p.powf(-self.b) + self.c
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# a={} b={} c={} threshold={} rms_log_residual={}\np,t_th,fit\n",
            self.a, self.b, self.c, self.threshold, self.rms_log_residual
        );
        for &(p, t) in &self.points {
            out.push_str(&format!("{p},{t},{}\n", self.eval(p)));
        }
        out
    }
}

impl ThoulessFit {
    pub fn manifest_json(&self, meta: Option<CurveMeta>, alpha: f64) -> String {
        let value = serde_json::json!({
            "alpha": alpha,
            "n": meta.map(|m| m.n),
            "mode": meta.map(|m| m.mode),
            "threshold": self.threshold,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "rms_log_residual": self.rms_log_residual,
            "points": self.points,
        });
        serde_json::to_string_pretty(&value).expect("manifest values are finite or null")
    }
}

const LM_MAX_ITERATIONS: usize = 500;

/// Levenberg–Marquardt fit of `ln t = ln(a p^{-b} + c)` over `(p, t_Th)` points.
pub fn fit_thouless_scaling(points: &[(f64, f64)]) -> Result<ThoulessFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 (p, t_Th) points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(p, t)| !(p > 0.0 && p <= 1.0 && t > 0.0 && t.is_finite())) {
        return Err(invalid("points need p in (0, 1] and positive finite t_Th"));
    }
    let (pmin, pmax) = points
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(p, _)| (lo.min(p), hi.max(p)));
    if pmax / pmin < 10.0 - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "p values span [{pmin}, {pmax}], less than a decade"
        )));
    }
    // Start from the power law with c = 0: ln t = ln a − b ln p.
    let xs: Vec<f64> = points.iter().map(|&(p, _)| p.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| t.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b0 = -sxy / sxx;
    let mut theta = [my + b0 * mx, b0, 0.0];

    let residuals = |th: &[f64; 3]| -> Option<Vec<f64>> {
        points
            .iter()
            .map(|&(p, t)| {
                let f = th[0].exp() * p.powf(-th[1]) + th[2];
                (f > 0.0).then(|| t.ln() - f.ln())
            })
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();

    let mut r = residuals(&theta).ok_or(Error::FitFailure {
        iterations: 0,
        residual: f64::NAN,
    })?;
    let mut current = cost(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = current < 1e-28;
    while !converged && iterations < LM_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = vec![vec![0.0; 3]; 3];
        let mut jtr = vec![0.0; 3];
        for (k, &(p, _)) in points.iter().enumerate() {
            let g = theta[0].exp() * p.powf(-theta[1]);
            let f = g + theta[2];
            let row = [-g / f, g * p.ln() / f, -1.0 / f];
            for i in 0..3 {
                jtr[i] += row[i] * r[k];
                for j in 0..3 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj.clone();
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(step) = solve_small(damped, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            if let Some(rt) = residuals(&trial) {
                let c = cost(&rt);
                if c < current {
                    let rel = (current - c) / current.max(1e-300);
                    let small_step = step.iter().zip(&trial).all(|(s, t)| s.abs() <= 1e-12 * (1.0 + t.abs()));
                    theta = trial;
                    r = rt;
                    current = c;
                    lambda = (lambda / 10.0).max(1e-15);
                    improved = true;
                    converged = rel < 1e-14 || small_step || current < 1e-28;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left: at a (local) minimum
            converged = true;
        }
    }
    let rms = (current / n).sqrt();
    if !converged || !(theta[1] > 0.0) || !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::FitFailure {
            iterations,
            residual: rms,
        });
    }
    Ok(ThoulessFit {
        points: points.to_vec(),
        a: theta[0].exp(),
        b: theta[1],
        c: theta[2],
        threshold: THOULESS_THRESHOLD,
        rms_log_residual: rms,
        iterations,
    })
}
