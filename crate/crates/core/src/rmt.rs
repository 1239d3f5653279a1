//! Sampled Gaussian reference ensembles (GOE, GUE, GSE) and the Poisson
//! surrogate, for comparison with singular-value statistics.

use faer::{c64, Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::realization_rng;
use crate::spacing::{ensemble_mean_r, spacing_histogram, spacing_ratios, HistogramBins, SpacingHistogram, SpacingOptions};
use crate::spectral::hermitian_eigenvalues;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnsembleClass {
    Goe,
    Gue,
    Gse,
    Poisson,
}

impl EnsembleClass {
    pub const ALL: [EnsembleClass; 4] = [
        EnsembleClass::Goe,
        EnsembleClass::Gue,
        EnsembleClass::Gse,
        EnsembleClass::Poisson,
    ];

    /// Large-matrix `⟨r⟩` of the class. Poisson is `2 ln 2 − 1`.
    pub fn reference_r(self) -> f64 {
        match self {
            EnsembleClass::Goe => 0.5307,
            EnsembleClass::Gue => 0.5996,
            EnsembleClass::Gse => 0.6744,
            EnsembleClass::Poisson => 0.3863,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleClass::Goe => "GOE",
            EnsembleClass::Gue => "GUE",
            EnsembleClass::Gse => "GSE",
            EnsembleClass::Poisson => "Poisson",
        }
    }

    /// SYK symmetry class of the dense model by `N mod 8`.
    pub fn for_syk(n: usize) -> EnsembleClass {
        match n % 8 {
            0 => EnsembleClass::Goe,
            4 => EnsembleClass::Gse,
            _ => EnsembleClass::Gue,
        }
    }

    /// Spacing options for reference statistics: Kramers pairs are merged for GSE.
    pub fn spacing_options(self) -> SpacingOptions {
        match self {
            EnsembleClass::Gse => SpacingOptions::default().collapsed(),
            _ => SpacingOptions::default(),
        }
    }
}

impl std::fmt::Display for EnsembleClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnsembleClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "goe" => Ok(EnsembleClass::Goe),
            "gue" => Ok(EnsembleClass::Gue),
            "gse" => Ok(EnsembleClass::Gse),
            "poisson" => Ok(EnsembleClass::Poisson),
            other => Err(invalid(format!("unknown ensemble class {other:?}"))),
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    std * rng.sample::<f64, _>(StandardNormal)
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> c64 {
    let s = std * std::f64::consts::FRAC_1_SQRT_2;
    c64::new(gaussian(rng, s), gaussian(rng, s))
}

fn check_dim(class: EnsembleClass, dim: usize) -> Result<()> {
    if dim < 4 {
        return Err(invalid(format!("reference matrices need dim ≥ 4, got {dim}")));
    }
    if class == EnsembleClass::Gse && dim % 2 != 0 {
        return Err(invalid(format!("GSE needs an even dimension, got {dim}")));
    }
    Ok(())
}

/// Real symmetric GOE matrix, off-diagonal variance `1/dim`.
fn sample_goe_real<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat<f64> {
    let std = (2.0 / dim as f64).sqrt();
    let a = Mat::<f64>::from_fn(dim, dim, |_, _| gaussian(rng, std));
    Mat::from_fn(dim, dim, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// Samples one Hermitian matrix from `class`.
///
/// All three Gaussian classes have off-diagonal `E|H_ij|² = 1/dim`, so their
/// semicircles share the same radius. GSE matrices are built as the
/// self-dual quaternion form `[[A, B], [−B̄, Ā]]` (A Hermitian, B
/// antisymmetric), so every eigenvalue is doubly degenerate.
pub fn sample_gaussian_matrix<R: Rng + ?Sized>(
    class: EnsembleClass,
    dim: usize,
    rng: &mut R,
) -> Result<Mat<c64>> {
    check_dim(class, dim)?;
    let std = (2.0 / dim as f64).sqrt();
    match class {
        EnsembleClass::Goe => {
            let h = sample_goe_real(dim, rng);
            Ok(Mat::from_fn(dim, dim, |i, j| c64::new(h[(i, j)], 0.0)))
        }
        EnsembleClass::Gue => {
            let a = Mat::<c64>::from_fn(dim, dim, |_, _| complex_gaussian(rng, std));
            Ok(Mat::from_fn(dim, dim, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5))
        }
        EnsembleClass::Gse => {
            let n = dim / 2;
            let ra = Mat::<c64>::from_fn(n, n, |_, _| complex_gaussian(rng, std));
            let rb = Mat::<c64>::from_fn(n, n, |_, _| complex_gaussian(rng, std));
            let a = Mat::<c64>::from_fn(n, n, |i, j| (ra[(i, j)] + ra[(j, i)].conj()) * 0.5);
            let b = Mat::<c64>::from_fn(n, n, |i, j| (rb[(i, j)] - rb[(j, i)]) * 0.5);
            Ok(Mat::from_fn(dim, dim, |i, j| match (i < n, j < n) {
                (true, true) => a[(i, j)],
                (true, false) => b[(i, j - n)],
                (false, true) => -b[(i - n, j)].conj(),
                (false, false) => a[(i - n, j - n)].conj(),
            }))
        }
        EnsembleClass::Poisson => Err(invalid(
            "the Poisson class has no Gaussian matrix; use reference_levels",
        )),
    }
}

/// One sampled spectrum of `class`, ascending. Poisson levels are partial
/// sums of i.i.d. unit exponentials.
pub fn reference_levels<R: Rng + ?Sized>(
    class: EnsembleClass,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dim(class, dim)?;
    match class {
        EnsembleClass::Poisson => {
            let mut x = 0.0;
            Ok((0..dim)
                .map(|_| {
                    x -= (1.0 - rng.random::<f64>()).ln();
                    x
                })
                .collect())
        }
        EnsembleClass::Goe => {
            let h = sample_goe_real(dim, rng);
            let mut eig = h
                .self_adjoint_eigenvalues(Side::Lower)
                .map_err(|e| Error::Numerical(format!("eigh: {e:?}")))?;
            eig.sort_by(f64::total_cmp);
            Ok(eig)
        }
        _ => hermitian_eigenvalues(sample_gaussian_matrix(class, dim, rng)?.as_ref()),
    }
}

/// Sampled spectra of `class`, sample `i` drawn from stream `i` of `seed`.
pub fn sample_reference_spectra(
    class: EnsembleClass,
    dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_dim(class, dim)?;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| reference_levels(class, dim, &mut realization_rng(seed, i)))
        .collect()
}

/// Sampled `⟨r⟩` and its standard error for `class`.
pub fn reference_mean_r(
    class: EnsembleClass,
    dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let opts = class.spacing_options();
    let stats = sample_reference_spectra(class, dim, n_samples, seed)?
        .iter()
        .map(|levels| spacing_ratios(levels, &opts))
        .collect::<Result<Vec<_>>>()?;
    ensemble_mean_r(&stats)
}

/// Sampled unit-mean spacing density of `class`.
pub fn reference_spacing_curve(
    class: EnsembleClass,
    dim: usize,
    n_samples: usize,
    seed: u64,
    bins: HistogramBins,
) -> Result<SpacingHistogram> {
    if n_samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let spectra = sample_reference_spectra(class, dim, n_samples, seed)?;
    spacing_histogram(&spectra, bins, &class.spacing_options())
}
