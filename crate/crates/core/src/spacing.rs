//! Short-range statistics: consecutive spacing ratios and spacing histograms.

use log::warn;

use crate::error::{invalid, Error, Result};
use crate::numeric::{mean_and_standard_error, NeumaierSum};

/// Fraction of near-degenerate spacings above which a spectrum is flagged.
pub const DEGENERATE_WARNING_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingOptions {
    /// Fraction of levels dropped at each spectral edge.
    pub edge_trim: f64,
    /// Spacings below `degeneracy_tolerance · (mean spacing)` count as degenerate.
    pub degeneracy_tolerance: f64,
    /// Merge degenerate levels before forming ratios.
    pub collapse_degenerate: bool,
}

impl Default for SpacingOptions {
    fn default() -> Self {
        SpacingOptions {
            edge_trim: 0.1,
            degeneracy_tolerance: 1e-8,
            collapse_degenerate: false,
        }
    }
}

impl SpacingOptions {
    pub fn collapsed(mut self) -> Self {
        self.collapse_degenerate = true;
        self
    }

    pub fn with_trim(mut self, edge_trim: f64) -> Self {
        self.edge_trim = edge_trim;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.edge_trim) {
            return Err(invalid(format!("edge_trim must lie in [0, 0.5), got {}", self.edge_trim)));
        }
        if !(self.degeneracy_tolerance >= 0.0) {
            return Err(invalid("degeneracy_tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpacingStats {
    /// Ratios `min(λ_n, λ_{n+1}) / max(λ_n, λ_{n+1})`; pairs with both spacings zero are excluded.
    pub r_values: Vec<f64>,
    pub mean_r: f64,
    pub std_error: f64,
    /// Number of consecutive spacing pairs, `retained levels − 2`.
    pub n_spacings: usize,
    /// Pairs with `0/0` ratio.
    pub n_excluded: usize,
    pub edge_trim: f64,
    pub degeneracy_tolerance: f64,
    /// Fraction of bulk spacings below the degeneracy threshold (before any collapse).
    pub degenerate_fraction: f64,
    pub degenerate_warning: bool,
}

/// Sorted bulk levels, after trimming and (optionally) merging degenerate runs.
/// Also returns the degenerate fraction of the trimmed spectrum.
fn bulk_levels(levels: &[f64], opts: &SpacingOptions) -> Result<(Vec<f64>, f64)> {
    opts.validate()?;
    if levels.iter().any(|v| !v.is_finite()) {
        return Err(invalid("spectrum contains non-finite values"));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = (opts.edge_trim * sorted.len() as f64).floor() as usize;
    let bulk = &sorted[cut..sorted.len() - cut];
    if bulk.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} levels remain after trimming, need at least 4",
            bulk.len()
        )));
    }
    let width = bulk[bulk.len() - 1] - bulk[0];
    if width <= 0.0 {
        return Err(Error::DegenerateSpectrum("all spacings are zero".into()));
    }
    let threshold = opts.degeneracy_tolerance * width / (bulk.len() - 1) as f64;
    let degenerate = bulk.windows(2).filter(|w| w[1] - w[0] <= threshold).count();
    let fraction = degenerate as f64 / (bulk.len() - 1) as f64;
    if !opts.collapse_degenerate {
        return Ok((bulk.to_vec(), fraction));
    }
    let mut merged = Vec::with_capacity(bulk.len());
    merged.push(bulk[0]);
    for &x in &bulk[1..] {
        if x - merged[merged.len() - 1] > threshold {
            merged.push(x);
        }
    }
    if merged.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} distinct levels remain after merging degeneracies",
            merged.len()
        )));
    }
    Ok((merged, fraction))
}

/// Consecutive spacing ratios of one spectrum's bulk.
pub fn spacing_ratios(levels: &[f64], opts: &SpacingOptions) -> Result<SpacingStats> {
    let (bulk, degenerate_fraction) = bulk_levels(levels, opts)?;
    let degenerate_warning = degenerate_fraction > DEGENERATE_WARNING_FRACTION;
    if degenerate_warning && !opts.collapse_degenerate {
        warn!(
            "{:.0}% of spacings are degenerate; consider collapsing degeneracies",
            100.0 * degenerate_fraction
        );
    }
    let spacings: Vec<f64> = bulk.windows(2).map(|w| w[1] - w[0]).collect();
    let n_spacings = spacings.len() - 1;
    let mut r_values = Vec::with_capacity(n_spacings);
    for w in spacings.windows(2) {
        let (lo, hi) = if w[0] <= w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
        if hi > 0.0 {
            r_values.push(lo / hi);
        }
    }
    let n_excluded = n_spacings - r_values.len();
    if r_values.is_empty() {
        return Err(Error::DegenerateSpectrum("every spacing ratio is 0/0".into()));
    }
    let (mean_r, std_error) = mean_and_standard_error(&r_values);
    Ok(SpacingStats {
        r_values,
        mean_r,
        std_error,
        n_spacings,
        n_excluded,
        edge_trim: opts.edge_trim,
        degeneracy_tolerance: opts.degeneracy_tolerance,
        degenerate_fraction,
        degenerate_warning,
    })
}

/// Pooled `⟨r⟩` across realizations.
///
/// The standard error comes from the spread of realization-level means; a
/// single realization falls back to its own standard error.
pub fn ensemble_mean_r(stats: &[SpacingStats]) -> Result<(f64, f64)> {
    if stats.is_empty() {
        return Err(invalid("no spacing statistics to pool"));
    }
    let mut total = NeumaierSum::default();
    let mut count = 0usize;
    for s in stats {
        for &r in &s.r_values {
            total.add(r);
        }
        count += s.r_values.len();
    }
    let mean = total.value() / count as f64;
    if stats.len() == 1 {
        return Ok((mean, stats[0].std_error));
    }
    let means: Vec<f64> = stats.iter().map(|s| s.mean_r).collect();
    let (_, se) = mean_and_standard_error(&means);
    Ok((mean, se))
}

/// Normalised density of unit-mean bulk spacings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacingHistogram {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    /// Spacings that fell inside the histogram range.
    pub n_counted: usize,
    /// Spacings beyond the last edge (excluded from the normalisation).
    pub n_outside: usize,
}

impl SpacingHistogram {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn area(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_width()
    }

    /// Bin centre of the highest density.
    pub fn peak(&self) -> (f64, f64) {
        let (i, d) = self
            .densities
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        (self.centers()[i], d)
    }

    /// Largest absolute density difference against another histogram on the same bins.
    pub fn sup_distance(&self, other: &SpacingHistogram) -> Result<f64> {
        if self.bin_edges != other.bin_edges {
            return Err(invalid("histograms use different bins"));
        }
        Ok(self
            .densities
            .iter()
            .zip(&other.densities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Two-column CSV (`lambda`, `density`) with `#` metadata lines.
    pub fn to_csv(&self, metadata: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in metadata {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("lambda,density\n");
        for (c, d) in self.centers().iter().zip(&self.densities) {
            out.push_str(&format!("{c},{d}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBins {
    pub count: usize,
    /// Upper edge; the lower edge is 0.
    pub upper: f64,
}

impl Default for HistogramBins {
    fn default() -> Self {
        HistogramBins {
            count: 40,
            upper: 4.0,
        }
    }
}

/// Unit-mean bulk spacings of one spectrum.
pub fn unit_mean_spacings(levels: &[f64], opts: &SpacingOptions) -> Result<Vec<f64>> {
    let (bulk, _) = bulk_levels(levels, opts)?;
    let spacings: Vec<f64> = bulk.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = spacings.iter().sum::<f64>() / spacings.len() as f64;
    Ok(spacings.iter().map(|s| s / mean).collect())
}

/// Pools unit-mean spacings over an ensemble into a normalised histogram.
pub fn spacing_histogram<S: AsRef<[f64]>>(
    ensemble: &[S],
    bins: HistogramBins,
    opts: &SpacingOptions,
) -> Result<SpacingHistogram> {
    if ensemble.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    let mut pooled = Vec::new();
    for spectrum in ensemble {
        pooled.extend(unit_mean_spacings(spectrum.as_ref(), opts)?);
    }
    histogram(&pooled, bins)
}

pub(crate) fn histogram(samples: &[f64], bins: HistogramBins) -> Result<SpacingHistogram> {
    if bins.count == 0 || !(bins.upper > 0.0) {
        return Err(invalid("histogram needs at least one bin and a positive range"));
    }
    let width = bins.upper / bins.count as f64;
    let mut counts = vec![0usize; bins.count];
    let mut n_outside = 0;
    for &s in samples {
        let k = (s / width).floor();
        if k < 0.0 || k >= bins.count as f64 {
            // the last edge is inclusive
            if s == bins.upper {
                counts[bins.count - 1] += 1;
            } else {
                n_outside += 1;
            }
        } else {
            counts[k as usize] += 1;
        }
    }
    let n_counted = samples.len() - n_outside;
    if n_counted == 0 {
        return Err(Error::InsufficientData("no spacings inside histogram range".into()));
    }
    let norm = 1.0 / (n_counted as f64 * width);
    Ok(SpacingHistogram {
        bin_edges: (0..=bins.count).map(|i| i as f64 * width).collect(),
        densities: counts.iter().map(|&c| c as f64 * norm).collect(),
        n_counted,
        n_outside,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn no_trim() -> SpacingOptions {
        SpacingOptions::default().with_trim(0.0)
    }

    fn poisson_levels(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x += -(1.0 - rng.random::<f64>()).ln();
                x
            })
            .collect()
    }

    #[test]
    fn equal_spacings() {
        let s = spacing_ratios(&[1.0, 2.0, 3.0, 4.0], &no_trim()).unwrap();
        assert_eq!(s.r_values, vec![1.0, 1.0]);
        assert_eq!(s.mean_r, 1.0);
        assert_eq!(s.n_spacings, 2);
    }

    #[test]
    fn hand_computed_ratios() {
        let s = spacing_ratios(&[0.0, 1.0, 3.0, 7.0], &no_trim()).unwrap();
        assert_eq!(s.r_values, vec![0.5, 0.5]);
        assert_eq!(s.mean_r, 0.5);
    }

    #[test]
    fn too_few_levels() {
        assert!(matches!(
            spacing_ratios(&[1.0, 2.0, 3.0], &no_trim()),
            Err(Error::InsufficientData(_))
        ));
        // trimming 10% of 5 levels drops none; of 10 drops 2
        assert!(spacing_ratios(&[0.0, 1.0, 2.0, 3.0, 4.0], &SpacingOptions::default()).is_ok());
    }

    #[test]
    fn all_zero_spectrum_is_degenerate() {
        assert!(matches!(
            spacing_ratios(&[0.0; 8], &no_trim()),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn zero_over_zero_excluded_and_single_zero_retained() {
        // spacings 1, 0, 0, 2: pairs (1,0)->0, (0,0)->excluded, (0,2)->0
        let s = spacing_ratios(&[0.0, 1.0, 1.0, 1.0, 3.0], &no_trim()).unwrap();
        assert_eq!(s.r_values, vec![0.0, 0.0]);
        assert_eq!(s.n_excluded, 1);
        assert_eq!(s.n_spacings, 3);
    }

    #[test]
    fn kramers_pairs_flagged_and_collapsed() {
        let levels: Vec<f64> = [0.0, 1.0, 3.0, 4.0, 7.0, 9.0].iter().flat_map(|&x| [x, x]).collect();
        let raw = spacing_ratios(&levels, &no_trim()).unwrap();
        assert!(raw.degenerate_warning);
        assert!(raw.degenerate_fraction > 0.4);
        let merged = spacing_ratios(&levels, &no_trim().collapsed()).unwrap();
        let expected = spacing_ratios(&[0.0, 1.0, 3.0, 4.0, 7.0, 9.0], &no_trim()).unwrap();
        assert_eq!(merged.r_values, expected.r_values);
    }

    #[test]
    fn ensemble_pooling() {
        let single = spacing_ratios(&[0.0, 1.0, 3.0, 7.0], &no_trim()).unwrap();
        let (m, _) = ensemble_mean_r(std::slice::from_ref(&single)).unwrap();
        assert_eq!(m, single.mean_r);

        let mut a = single.clone();
        a.r_values = vec![0.4, 0.4];
        a.mean_r = 0.4;
        let mut b = single;
        b.r_values = vec![0.6, 0.6];
        b.mean_r = 0.6;
        let (m, se) = ensemble_mean_r(&[a, b]).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert!((se - 0.1).abs() < 1e-12);
        assert!(ensemble_mean_r(&[]).is_err());
    }

    #[test]
    fn poisson_surrogate_mean_r() {
        // Oracle: i.i.d. exponential spacings, 1e4 levels × 100 draws.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stats: Vec<_> = (0..100)
            .map(|_| spacing_ratios(&poisson_levels(10_000, &mut rng), &SpacingOptions::default()).unwrap())
            .collect();
        let (m, _) = ensemble_mean_r(&stats).unwrap();
        assert!((m - 0.3863).abs() < 0.004, "{m}");
    }

    #[test]
    fn equal_spacing_histogram_is_delta() {
        let levels: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let h = spacing_histogram(&[levels], HistogramBins { count: 8, upper: 4.0 }, &SpacingOptions::default()).unwrap();
        assert!((h.area() - 1.0).abs() < 1e-12);
        assert_eq!(h.densities.iter().filter(|&&d| d > 0.0).count(), 1);
        // λ = 1 sits on the edge between bins [0.5,1) and [1,1.5)
        assert!(h.densities[2] > 0.0);
    }

    #[test]
    fn poisson_histogram_peaks_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ens: Vec<Vec<f64>> = (0..20).map(|_| poisson_levels(2000, &mut rng)).collect();
        let h = spacing_histogram(&ens, HistogramBins::default(), &SpacingOptions::default()).unwrap();
        let (peak, _) = h.peak();
        assert!(peak < h.bin_width());
        assert!((h.area() - 1.0).abs() < 1e-6);
    }

    proptest! {
        // Dyadic levels, scales and shifts keep the arithmetic exact.
        #[test]
        fn ratios_are_invariant(
            raw in proptest::collection::vec(0u32..100_000, 12..40),
            scale_exp in -6i32..6,
            shift in -4000i32..4000,
            rot in 0usize..40,
        ) {
            let levels: Vec<f64> = raw.iter().map(|&k| k as f64 / 16.0).collect();
            let opts = no_trim();
            let base = match spacing_ratios(&levels, &opts) {
                Ok(s) => s,
                Err(_) => return Ok(()),
            };
            prop_assert!(base.r_values.iter().all(|r| (0.0..=1.0).contains(r)));

            let mut permuted = levels.clone();
            permuted.rotate_left(rot % levels.len());
            prop_assert_eq!(&spacing_ratios(&permuted, &opts).unwrap().r_values, &base.r_values);

            let c = 2f64.powi(scale_exp);
            let scaled: Vec<f64> = levels.iter().map(|x| x * c).collect();
            prop_assert_eq!(&spacing_ratios(&scaled, &opts).unwrap().r_values, &base.r_values);

            let shifted: Vec<f64> = levels.iter().map(|x| x + shift as f64 / 16.0).collect();
            prop_assert_eq!(&spacing_ratios(&shifted, &opts).unwrap().r_values, &base.r_values);
        }
    }
}
