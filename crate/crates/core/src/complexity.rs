//! Singular complexity, its long-time plateau and the second-derivative identity.
//!
//! Pair sums run over ordered pairs `i ≠ j`, so the early-time growth is
//! `C(t) ≈ (1 − 1/L) t²`. Pairs closer than `tolerance · max|σ|` are
//! treated as degenerate and skipped.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::form_factor::{filtered_form_factor, CurveMeta, GridSpacing, TimeGrid};
use crate::numeric::{mean_and_standard_error, NeumaierSum};

pub const DEGENERACY_TOLERANCE: f64 = 1e-12;
/// Step halving must change the second difference by less than this fraction of the curve scale.
const RESOLUTION_FRACTION: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityCurve {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub beta: f64,
    pub n_realizations: usize,
    pub meta: Option<CurveMeta>,
}

impl ComplexityCurve {
    pub fn with_meta(mut self, meta: CurveMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn manifest_json(&self) -> String {
        let value = serde_json::json!({
            "beta": self.beta,
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
        });
        serde_json::to_string_pretty(&value).expect("manifest values are finite")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.meta {
            out.push_str(&format!("# N={} p={} mode={}\n", m.n, m.p, m.mode));
        }
        out.push_str(&format!("# beta={} n_realizations={}\n", self.beta, self.n_realizations));
        out.push_str("t,C\n");
        for (t, c) in self.grid.points().iter().zip(&self.values) {
            out.push_str(&format!("{t},{c}\n"));
        }
        out
    }
}

/// Non-degenerate ordered-pair differences and their Boltzmann weights.
struct PairTable {
    diffs: Vec<f64>,
    weights: Vec<f64>,
    prefactor: f64,
}

fn pair_table(levels: &[f64], beta: f64, tolerance: f64) -> PairTable {
    let l = levels.len();
    let scale = levels.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let cut = tolerance * scale;
    let boltz: Vec<f64> = levels.iter().map(|s| (-beta * s).exp()).collect();
    let mut diffs = Vec::with_capacity(l * l.saturating_sub(1));
    let mut weights = Vec::with_capacity(diffs.capacity());
    for i in 0..l {
        for j in 0..l {
            let d = levels[i] - levels[j];
            if i != j && d.abs() > cut {
                diffs.push(d);
                weights.push(boltz[i] * boltz[j]);
            }
        }
    }
    let prefactor = if beta == 0.0 {
        1.0 / (l * l) as f64
    } else {
        let z2: f64 = boltz.iter().map(|b| b * b).sum();
        1.0 / (z2 * l as f64)
    };
    PairTable {
        diffs,
        weights,
        prefactor,
    }
}

impl PairTable {
    fn eval(&self, t: f64) -> f64 {
        let mut acc = NeumaierSum::default();
        for (&d, &w) in self.diffs.iter().zip(&self.weights) {
            let s = (0.5 * t * d).sin();
            acc.add(w * 4.0 * s * s / (d * d));
        }
        self.prefactor * acc.value()
    }
}

/// `C(t)` of a single spectrum.
///
/// At `beta = 0` this is `(1/L²) Σ_{i≠j} [sin(tΔ_ij/2) / (Δ_ij/2)]²`. For
/// `beta > 0` every pair carries `exp(−β(σ_i + σ_j))` and the prefactor is
/// `1 / (Z₂ L)` with `Z₂ = Σ_n exp(−2βσ_n)`.
pub fn complexity_curve(levels: &[f64], grid: &TimeGrid, beta: f64, tolerance: f64) -> Result<Vec<f64>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be finite and non-negative, got {beta}")));
    }
    if levels.is_empty() {
        return Err(invalid("empty spectrum"));
    }
    let table = pair_table(levels, beta, tolerance);
    Ok(grid.points().iter().map(|&t| table.eval(t)).collect())
}

/// Ensemble-averaged singular complexity.
pub fn singular_complexity<S: AsRef<[f64]> + Sync>(
    spectra: &[S],
    grid: &TimeGrid,
    beta: f64,
) -> Result<ComplexityCurve> {
    singular_complexity_with_tolerance(spectra, grid, beta, DEGENERACY_TOLERANCE)
}

pub fn singular_complexity_with_tolerance<S: AsRef<[f64]> + Sync>(
    spectra: &[S],
    grid: &TimeGrid,
    beta: f64,
    tolerance: f64,
) -> Result<ComplexityCurve> {
    if spectra.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    let curves = spectra
        .par_iter()
        .map(|s| complexity_curve(s.as_ref(), grid, beta, tolerance))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![NeumaierSum::default(); grid.len()];
    for c in &curves {
        for (a, v) in acc.iter_mut().zip(c) {
            a.add(*v);
        }
    }
    let n = spectra.len() as f64;
    Ok(ComplexityCurve {
        grid: grid.clone(),
        values: acc.iter().map(|a| a.value() / n).collect(),
        beta,
        n_realizations: spectra.len(),
        meta: None,
    })
}

/// Long-time average `C̄ = (2/L²) Σ_{i≠j} 1/Δ_ij²`.
pub fn complexity_plateau(levels: &[f64]) -> Result<f64> {
    complexity_plateau_with_tolerance(levels, DEGENERACY_TOLERANCE)
}

pub fn complexity_plateau_with_tolerance(levels: &[f64], tolerance: f64) -> Result<f64> {
    let table = pair_table(levels, 0.0, tolerance);
    if table.diffs.is_empty() {
        return Err(Error::DegenerateSpectrum(format!(
            "no two of the {} values are distinct",
            levels.len()
        )));
    }
    let mut acc = NeumaierSum::default();
    for d in &table.diffs {
        acc.add(1.0 / (d * d));
    }
    Ok(2.0 * table.prefactor * acc.value())
}

/// Ensemble mean plateau and its standard error.
///
/// Realizations without two distinct levels (e.g. `H = 0` at tiny `p`) have
/// no plateau and are skipped with a warning; it is an error if none remain.
pub fn mean_complexity_plateau<S: AsRef<[f64]> + Sync>(spectra: &[S]) -> Result<(f64, f64)> {
    if spectra.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    let outcomes: Vec<Result<f64>> = spectra.par_iter().map(|s| complexity_plateau(s.as_ref())).collect();
    let mut values = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(v) => values.push(v),
            Err(Error::DegenerateSpectrum(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::DegenerateSpectrum("no realization has two distinct levels".into()));
    }
    if values.len() < spectra.len() {
        log::warn!(
            "{} of {} realizations have no distinct levels and were skipped",
            spectra.len() - values.len(),
            spectra.len()
        );
    }
    Ok(mean_and_standard_error(&values))
}

/// `(p, C̄)` table.
pub fn plateau_table_csv(rows: &[(f64, f64, f64)], n: usize) -> String {
    let mut out = format!("# N={n}\np,plateau,std_error\n");
    for (p, c, se) in rows {
        out.push_str(&format!("{p},{c},{se}\n"));
    }
    out
}

/// Checks `d²C/dt² = 2 σFF(t) − 2/L` on a linear grid.
///
/// The second derivative at each interior point comes from central
/// differences at the grid step `h` and at `h/2`, Richardson-extrapolated.
/// Residuals are divided by the largest `|2 σFF − 2/L|` on the grid. If
/// halving the step moves the second difference by more than 1% of that
/// scale the grid is too coarse and a resolution error is returned.
pub fn verify_derivative_identity(levels: &[f64], grid: &TimeGrid) -> Result<f64> {
    if grid.spacing() != GridSpacing::Linear {
        return Err(invalid("the derivative identity needs a linear grid"));
    }
    if levels.len() < 2 {
        return Err(invalid("need at least two levels"));
    }
    let h = grid.step().expect("linear grid");
    let table = pair_table(levels, 0.0, DEGENERACY_TOLERANCE);
    let l = levels.len() as f64;
    let t = grid.points();
    let rhs: Vec<f64> = filtered_form_factor(levels, grid, 0.0)?
        .iter()
        .map(|f| 2.0 * f - 2.0 / l)
        .collect();
    let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Numerical("identity right-hand side vanishes on the grid".into()));
    }
    let c: Vec<f64> = t.iter().map(|&ti| table.eval(ti)).collect();
    let mut worst = 0.0f64;
    for i in 1..t.len() - 1 {
        let coarse = (c[i + 1] - 2.0 * c[i] + c[i - 1]) / (h * h);
        let hh = 0.5 * h;
        let fine = (table.eval(t[i] + hh) - 2.0 * c[i] + table.eval(t[i] - hh)) / (hh * hh);
        if (fine - coarse).abs() > RESOLUTION_FRACTION * scale {
            return Err(Error::Resolution(format!(
                "step {h} does not resolve d²C/dt² at t = {}",
                t[i]
            )));
        }
        let extrapolated = (4.0 * fine - coarse) / 3.0;
        worst = worst.max((extrapolated - rhs[i]).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::realization_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn random_levels(l: usize, seed: u64) -> Vec<f64> {
        let mut rng = realization_rng(seed, 0);
        let mut v: Vec<f64> = (0..l).map(|_| rng.random::<f64>() * 2.0).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn zero_at_origin_and_rejects_negative_beta() {
        let grid = TimeGrid::linear(0.0, 1.0, 11).unwrap();
        let c = singular_complexity(&[random_levels(10, 1)], &grid, 0.0).unwrap();
        assert_eq!(c.values[0], 0.0);
        assert!(singular_complexity(&[vec![1.0]], &grid, -0.1).is_err());
    }

    #[test]
    fn two_level_closed_form() {
        // Oracle: L = 2, ordered pairs: C(t) = (1/4)·2·[sin(πt/2)/(π/2)]² = (1 − cos πt)/π².
        let grid = TimeGrid::linear(0.0, 4.0, 41).unwrap();
        let c = singular_complexity(&[vec![0.0, PI]], &grid, 0.0).unwrap();
        for (&t, &v) in grid.points().iter().zip(&c.values) {
            assert!((v - (1.0 - (PI * t).cos()) / (PI * PI)).abs() < 1e-15);
        }
        assert!((c.values[10] - 2.0 / (PI * PI)).abs() < 1e-15);
    }

    #[test]
    fn early_time_quadratic_growth() {
        let levels = random_levels(40, 2);
        let smax = levels[39];
        let grid = TimeGrid::linear(0.0, 0.01 / smax, 11).unwrap();
        let c = singular_complexity(&[levels], &grid, 0.0).unwrap();
        for (&t, &v) in grid.points().iter().zip(&c.values).skip(1) {
            assert!((v / (t * t) / (1.0 - 1.0 / 40.0) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn two_level_plateau() {
        let cbar = complexity_plateau(&[0.0, PI]).unwrap();
        assert!((cbar - 1.0 / (PI * PI)).abs() < 1e-16);
        // numerical long-time average over t ∈ [0, 10⁴]
        let grid = TimeGrid::linear(0.0, 1e4, 100_001).unwrap();
        let c = singular_complexity(&[vec![0.0, PI]], &grid, 0.0).unwrap();
        let avg = c.values.iter().sum::<f64>() / c.values.len() as f64;
        assert!((avg / cbar - 1.0).abs() < 0.01);
    }

    #[test]
    fn plateau_matches_long_time_average() {
        for seed in 0..5 {
            let levels = random_levels(12, 100 + seed);
            let gap = levels.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let grid = TimeGrid::linear(0.0, 2e3 / gap, 200_001).unwrap();
            let c = singular_complexity(&[levels.clone()], &grid, 0.0).unwrap();
            let avg = c.values.iter().sum::<f64>() / c.values.len() as f64;
            let cbar = complexity_plateau(&levels).unwrap();
            assert!((avg / cbar - 1.0).abs() < 0.01, "seed {seed}: {avg} vs {cbar}");
        }
    }

    #[test]
    fn plateau_errors_on_degenerate_spectrum() {
        assert!(matches!(
            complexity_plateau(&[1.0, 1.0, 1.0]),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn ensemble_plateau_skips_empty_realizations() {
        let (m, se) = mean_complexity_plateau(&[vec![0.0; 4], vec![0.0, 1.0, 1.0]]).unwrap();
        assert!((m - 8.0 / 9.0).abs() < 1e-15 && se == 0.0);
        assert!(mean_complexity_plateau(&[vec![0.0; 4]]).is_err());
    }

    #[test]
    fn degenerate_pairs_are_skipped() {
        let with = complexity_plateau(&[0.0, 1.0, 1.0]).unwrap();
        // four non-degenerate ordered pairs with Δ² = 1, L = 3
        assert!((with - 2.0 * 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn small_beta_recovers_infinite_temperature() {
        let levels = random_levels(30, 3);
        let smax = levels[29];
        let grid = TimeGrid::log(1e-2, 1e3, 80).unwrap();
        let c0 = singular_complexity(&[levels.clone()], &grid, 0.0).unwrap();
        let cb = singular_complexity(&[levels], &grid, 1e-10 / smax).unwrap();
        for (a, b) in c0.values.iter().zip(&cb.values) {
            assert!((a - b).abs() <= 1e-8 * a.abs());
        }
    }

    #[test]
    fn identity_two_level() {
        let grid = TimeGrid::linear(0.0, 2.0, 20_001).unwrap();
        let r = verify_derivative_identity(&[0.0, PI], &grid).unwrap();
        assert!(r <= 1e-6, "{r}");
    }

    #[test]
    fn identity_random_levels_and_shift() {
        let levels = random_levels(8, 4);
        let grid = TimeGrid::linear(0.0, 5.0, 5_001).unwrap();
        let r = verify_derivative_identity(&levels, &grid).unwrap();
        assert!(r <= 1e-5, "{r}");
        let shifted: Vec<f64> = levels.iter().map(|s| s + 0.75).collect();
        let rs = verify_derivative_identity(&shifted, &grid).unwrap();
        assert!((rs - r).abs() <= 1e-6);
    }

    #[test]
    fn coarse_grid_is_a_resolution_error() {
        let levels: Vec<f64> = (0..8).map(|i| 10.0 * i as f64).collect();
        let grid = TimeGrid::linear(0.0, 5.0, 11).unwrap();
        assert!(matches!(verify_derivative_identity(&levels, &grid), Err(Error::Resolution(_))));
        assert!(verify_derivative_identity(&levels, &TimeGrid::default_log()).is_err());
    }

    proptest! {
        #[test]
        fn plateau_is_homogeneous_of_degree_minus_two(
            levels in proptest::collection::vec(0.0f64..5.0, 3..20),
            k in -3i32..4,
        ) {
            prop_assume!(complexity_plateau(&levels).is_ok());
            let c = 2f64.powi(k);
            let scaled: Vec<f64> = levels.iter().map(|s| c * s).collect();
            let a = complexity_plateau(&levels).unwrap();
            let b = complexity_plateau(&scaled).unwrap();
            prop_assert!((b * c * c - a).abs() <= 1e-12 * a);
        }

        #[test]
        fn complexity_is_non_negative(levels in proptest::collection::vec(0.0f64..5.0, 1..15)) {
            let grid = TimeGrid::log(1e-3, 1e3, 60).unwrap();
            let c = singular_complexity(&[levels], &grid, 0.3).unwrap();
            prop_assert!(c.values.iter().all(|&v| v >= 0.0));
        }
    }
}
