//! Singular spectra: direct SVD, the Hermitization cross-check, and sign
//! recovery for Hermitian inputs.

use faer::{c64, Mat, MatRef, Par, Side};

use crate::error::{invalid, Error, Result};
use crate::majorana::{max_abs, Sector};
use crate::sampler::ModelConfig;

/// Minimum `|⟨u_n|v_n⟩|` accepted as "parallel up to sign".
pub const SIGN_OVERLAP_THRESHOLD: f64 = 0.99;

/// Hermiticity tolerance for [`sign_align`], relative to `‖H‖_max`.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Relative width used to group singular values into degenerate clusters.
const CLUSTER_TOLERANCE: f64 = 1e-9;

/// Runs dense kernels on the calling thread.
pub fn use_sequential_kernels() {
    faer::set_global_parallelism(Par::Seq);
}

/// Where a spectrum came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSource {
    pub config: ModelConfig,
    pub sector: Sector,
}

/// Ascending, non-negative singular values of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub source: Option<SpectrumSource>,
}

impl SingularSpectrum {
    /// Sorts `values`; fails on negative or non-finite entries.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("singular value {bad} is not a finite non-negative real")));
        }
        values.sort_by(f64::total_cmp);
        Ok(SingularSpectrum {
            values,
            source: None,
        })
    }

    pub fn with_source(mut self, source: SpectrumSource) -> Self {
        self.source = Some(source);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Mean of `σ²`, i.e. `Tr(H†H) / L`.
    pub fn mean_square(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|s| s * s).sum::<f64>() / self.values.len() as f64
    }

    /// One-column CSV with a `#` metadata header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(src) = &self.source {
            let c = &src.config;
            out.push_str(&format!(
                "# N={} p={} mode={} sector={} seed={} index={}\n",
                c.n, c.p, c.mode, src.sector, c.master_seed, c.realization_index
            ));
        }
        out.push_str("sigma\n");
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }
}

impl AsRef<[f64]> for SingularSpectrum {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn require_square(h: MatRef<'_, c64>) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(invalid(format!(
            "expected a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

/// Singular values of `h` by direct SVD, ascending.
pub fn singular_values(h: MatRef<'_, c64>) -> Result<SingularSpectrum> {
    require_square(h)?;
    if h.nrows() == 0 {
        return SingularSpectrum::new(Vec::new());
    }
    let values = h
        .singular_values()
        .map_err(|e| Error::Numerical(format!("svd: {e:?}")))?;
    SingularSpectrum::new(values.into_iter().map(|v| v.max(0.0)).collect())
}

/// The `2L × 2L` block matrix `[[0, H], [H†, 0]]`.
pub fn hermitize(h: MatRef<'_, c64>) -> Result<Mat<c64>> {
    require_square(h)?;
    let l = h.nrows();
    let mut big = Mat::<c64>::zeros(2 * l, 2 * l);
    big.as_mut().submatrix_mut(0, l, l, l).copy_from(h);
    big.as_mut().submatrix_mut(l, 0, l, l).copy_from(h.adjoint());
    Ok(big)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(h: MatRef<'_, c64>) -> Result<Vec<f64>> {
    require_square(h)?;
    let mut eig = h
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigh: {e:?}")))?;
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Singular values via the Hermitization route: the upper half of the
/// spectrum of `[[0, H], [H†, 0]]`.
pub fn hermitized_singular_values(h: MatRef<'_, c64>) -> Result<SingularSpectrum> {
    let l = h.nrows();
    let eig = hermitian_eigenvalues(hermitize(h)?.as_ref())?;
    SingularSpectrum::new(eig[l..].iter().map(|v| v.abs()).collect())
}

/// `H = U Σ V†` with singular values ascending; column `n` of `u` and `v`
/// pairs with `sigma[n]`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Mat<c64>,
    pub sigma: Vec<f64>,
    pub v: Mat<c64>,
}

pub fn svd_factors(h: MatRef<'_, c64>) -> Result<SvdFactors> {
    require_square(h)?;
    let l = h.nrows();
    let svd = h.svd().map_err(|e| Error::Numerical(format!("svd: {e:?}")))?;
    // faer orders singular values non-increasingly.
    let s = svd.S().column_vector();
    let order: Vec<usize> = (0..l).rev().collect();
    let sigma = order.iter().map(|&k| s[k].re.max(0.0)).collect();
    let u = Mat::from_fn(l, l, |i, j| svd.U()[(i, order[j])]);
    let v = Mat::from_fn(l, l, |i, j| svd.V()[(i, order[j])]);
    Ok(SvdFactors { u, sigma, v })
}

impl SvdFactors {
    pub fn dimension(&self) -> usize {
        self.sigma.len()
    }

    /// `U Σ V†`.
    pub fn reconstruct(&self) -> Mat<c64> {
        let l = self.dimension();
        let us = Mat::from_fn(l, l, |i, j| self.u[(i, j)] * self.sigma[j]);
        &us * self.v.adjoint()
    }

    /// `max(‖U†U − I‖_max, ‖V†V − I‖_max)`.
    pub fn unitarity_defect(&self) -> f64 {
        let l = self.dimension();
        let id = Mat::<c64>::identity(l, l);
        let du = self.u.adjoint() * &self.u - &id;
        let dv = self.v.adjoint() * &self.v - &id;
        max_abs(du.as_ref()).max(max_abs(dv.as_ref()))
    }
}

/// Real spectrum recovered from singular values with signs restored.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedSpectrum {
    /// In the order of the factors' singular values.
    pub values: Vec<f64>,
}

impl SignedSpectrum {
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn overlap(u: MatRef<'_, c64>, v: MatRef<'_, c64>, a: usize, b: usize) -> c64 {
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..u.nrows() {
        acc += u[(i, a)].conj() * v[(i, b)];
    }
    acc
}

/// Restores eigenvalue signs of a Hermitian `H = U Σ V†`.
///
/// For an eigenpair `(E, w)` of Hermitian `H`, the singular vectors satisfy
/// `u = sign(E) v`, so `s_n = sign(Re⟨u_n|v_n⟩)`. Inside a cluster of
/// degenerate singular values the vectors may mix `+σ` and `−σ` states;
/// there the signs are the eigenvalues of the Hermitian involution
/// `U_c† V_c`. Zero singular values get sign `+1`.
pub fn sign_align(f: &SvdFactors) -> Result<SignedSpectrum> {
    let l = f.dimension();
    let h = f.reconstruct();
    let scale = max_abs(h.as_ref());
    let adj = h.adjoint().to_owned();
    let defect = max_abs((&h - &adj).as_ref());
    if defect > HERMITIAN_TOLERANCE * scale {
        return Err(Error::NonHermitian(format!(
            "‖H − H†‖_max = {defect:.3e} exceeds {:.3e}",
            HERMITIAN_TOLERANCE * scale
        )));
    }
    let sigma_max = f.sigma.last().copied().unwrap_or(0.0);
    let zero_cut = 1e-12 * sigma_max;
    let mut values = vec![0.0; l];
    let mut start = 0;
    while start < l {
        let mut end = start + 1;
        while end < l && f.sigma[end] - f.sigma[end - 1] <= CLUSTER_TOLERANCE * sigma_max {
            end += 1;
        }
        let signs = cluster_signs(f, start, end)?;
        for (k, s) in (start..end).zip(signs) {
            let sigma = f.sigma[k];
            values[k] = if sigma <= zero_cut { sigma } else { s * sigma };
        }
        start = end;
    }
    Ok(SignedSpectrum { values })
}

fn cluster_signs(f: &SvdFactors, start: usize, end: usize) -> Result<Vec<f64>> {
    let u = f.u.as_ref();
    let v = f.v.as_ref();
    let sigma_max = f.sigma.last().copied().unwrap_or(0.0);
    if f.sigma[end - 1] <= 1e-12 * sigma_max {
        return Ok(vec![1.0; end - start]);
    }
    if end - start == 1 {
        let o = overlap(u, v, start, start);
        if o.norm() < SIGN_OVERLAP_THRESHOLD {
            return Err(Error::NonHermitian(format!(
                "|⟨u|v⟩| = {:.4} for singular value {}",
                o.norm(),
                f.sigma[start]
            )));
        }
        return Ok(vec![o.re.signum()]);
    }
    let k = end - start;
    let m = Mat::from_fn(k, k, |a, b| overlap(u, v, start + a, start + b));
    let herm = Mat::from_fn(k, k, |a, b| (m[(a, b)] + m[(b, a)].conj()) * 0.5);
    let eig = hermitian_eigenvalues(herm.as_ref())?;
    if let Some(bad) = eig.iter().find(|e| e.abs() < SIGN_OVERLAP_THRESHOLD) {
        return Err(Error::NonHermitian(format!(
            "degenerate cluster at σ = {} has overlap eigenvalue {bad:.4}",
            f.sigma[start]
        )));
    }
    Ok(eig.iter().map(|e| e.signum()).collect())
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Veltkamp split: `a = hi + lo` with both halves holding 26 bits.
fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

/// Dekker's exact product `a b = p + e`, without relying on hardware FMA.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

/// Dot2-style accumulator: products and sums carried with their rounding errors.
#[derive(Default, Clone, Copy)]
struct Dot2 {
    hi: f64,
    lo: f64,
}

impl Dot2 {
    fn add_product(&mut self, a: f64, b: f64) {
        let (p, e) = two_prod(a, b);
        let (s, f) = two_sum(self.hi, p);
        self.hi = s;
        self.lo += e + f;
    }

    fn split(&self) -> (f64, f64) {
        two_sum(self.hi, self.lo)
    }

}

/// Double-double helpers: values carried as an unevaluated sum `hi + lo`.
fn dd_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (p, e) = two_prod(a.0, b.0);
    two_sum(p, e + (a.0 * b.1 + a.1 * b.0))
}

fn dd_sqrt(a: (f64, f64)) -> (f64, f64) {
    let s = a.0.sqrt();
    let (p, pe) = two_prod(s, s);
    let e = (((a.0 - p) - pe) + a.1) / (2.0 * s);
    two_sum(s, e)
}

fn dd_div(a: (f64, f64), b: (f64, f64)) -> f64 {
    let q = a.0 / b.0;
    let qb = dd_mul((q, 0.0), b);
    let r = (a.0 - qb.0) - qb.1 + a.1;
    q + r / b.0
}

/// `Re(x_n† H y_n) / (‖x_n‖ ‖y_n‖)` for every column pair, evaluated in
/// double-double and rounded once.
fn rayleigh_quotients(h: MatRef<'_, c64>, x: MatRef<'_, c64>, y: MatRef<'_, c64>) -> Vec<f64> {
    let l = h.nrows();
    let mut re = vec![Dot2::default(); l];
    let mut im = vec![Dot2::default(); l];
    (0..x.ncols())
        .map(|n| {
            re.fill(Dot2::default());
            im.fill(Dot2::default());
            for k in 0..l {
                let b = y[(k, n)];
                let col = h.col(k);
                for i in 0..l {
                    let a = col[i];
                    re[i].add_product(a.re, b.re);
                    re[i].add_product(-a.im, b.im);
                    im[i].add_product(a.re, b.im);
                    im[i].add_product(a.im, b.re);
                }
            }
            let (mut num, mut nx, mut ny) = (Dot2::default(), Dot2::default(), Dot2::default());
            for i in 0..l {
                let (a, b) = (x[(i, n)], y[(i, n)]);
                let (zr, zrl) = re[i].split();
                let (zi, zil) = im[i].split();
                num.add_product(a.re, zr);
                num.add_product(a.im, zi);
                num.add_product(a.re, zrl);
                num.add_product(a.im, zil);
                nx.add_product(a.re, a.re);
                nx.add_product(a.im, a.im);
                ny.add_product(b.re, b.re);
                ny.add_product(b.im, b.im);
            }
            let norm = dd_sqrt(dd_mul(nx.split(), ny.split()));
            dd_div(num.split(), norm)
        })
        .collect()
}

/// Singular values polished as `Re(u_n† H v_n)` with compensated sums, in
/// the order of `f`. Second order in the vector error, so typically within
/// a few ulps of the exact values.
pub fn refined_singular_values(h: MatRef<'_, c64>, f: &SvdFactors) -> Result<Vec<f64>> {
    require_square(h)?;
    if h.nrows() != f.dimension() {
        return Err(invalid("factors do not match the matrix"));
    }
    Ok(rayleigh_quotients(h, f.u.as_ref(), f.v.as_ref())
        .into_iter()
        .map(|s| s.max(0.0))
        .collect())
}

/// Eigenvalues of a Hermitian matrix polished by compensated Rayleigh
/// quotients of the eigenvectors, ascending.
pub fn refined_eigenvalues(h: MatRef<'_, c64>) -> Result<Vec<f64>> {
    require_square(h)?;
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigh: {e:?}")))?;
    let mut eig = rayleigh_quotients(h, evd.U(), evd.U());
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// [`sign_align`] with polished magnitudes, sorted ascending.
pub fn refined_signed_spectrum(h: MatRef<'_, c64>, f: &SvdFactors) -> Result<Vec<f64>> {
    let signed = sign_align(f)?;
    let sigma = refined_singular_values(h, f)?;
    let mut out: Vec<f64> = signed
        .values
        .iter()
        .zip(&sigma)
        .map(|(v, s)| if *v < 0.0 { -s } else { *s })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> Mat<c64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(n, n, |_, _| {
            c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_hermitian(n: usize, seed: u64) -> Mat<c64> {
        let a = random_matrix(n, seed);
        let adj = a.adjoint().to_owned();
        (&a + &adj) * faer::Scale(c64::new(0.5, 0.0))
    }

    #[test]
    fn diagonal_matrix() {
        let mut h = Mat::<c64>::zeros(2, 2);
        h[(0, 0)] = c64::new(3.0, 0.0);
        h[(1, 1)] = c64::new(0.0, -2.0);
        let s = singular_values(h.as_ref()).unwrap();
        assert!((s.values[0] - 2.0).abs() < 1e-15 && (s.values[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_square_rejected() {
        let h = Mat::<c64>::zeros(2, 3);
        assert!(matches!(singular_values(h.as_ref()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hermitian_singular_values_are_abs_eigenvalues() {
        let h = random_hermitian(12, 3);
        let mut abs: Vec<f64> = hermitian_eigenvalues(h.as_ref()).unwrap().iter().map(|e| e.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let s = singular_values(h.as_ref()).unwrap();
        for (a, b) in abs.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_square_roots_of_gram_eigenvalues() {
        let h = random_matrix(6, 11);
        let gram = h.adjoint() * &h;
        let oracle: Vec<f64> = hermitian_eigenvalues(gram.as_ref())
            .unwrap()
            .iter()
            .map(|e| e.max(0.0).sqrt())
            .collect();
        let s = singular_values(h.as_ref()).unwrap();
        for (a, b) in oracle.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-12 * s.max());
        }
    }

    #[test]
    fn hermitize_scalar() {
        let mut h = Mat::<c64>::zeros(1, 1);
        h[(0, 0)] = c64::new(1.0, 0.0);
        let eig = hermitian_eigenvalues(hermitize(h.as_ref()).unwrap().as_ref()).unwrap();
        assert!((eig[0] + 1.0).abs() < 1e-15 && (eig[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hermitized_spectrum_is_symmetric() {
        let h = random_matrix(9, 5);
        let eig = hermitian_eigenvalues(hermitize(h.as_ref()).unwrap().as_ref()).unwrap();
        let smax = eig.last().unwrap().abs();
        let n = eig.len();
        for k in 0..n / 2 {
            assert!((eig[k] + eig[n - 1 - k]).abs() < 1e-10 * smax);
        }
    }

    #[test]
    fn factors_are_unitary_and_reconstruct() {
        let h = random_matrix(10, 9);
        let f = svd_factors(h.as_ref()).unwrap();
        assert!(f.unitarity_defect() < 1e-10);
        let r = f.reconstruct();
        assert!(max_abs((&r - &h).as_ref()) < 1e-10 * max_abs(h.as_ref()));
        assert!(f.sigma.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sign_align_diagonal() {
        let mut h = Mat::<c64>::zeros(2, 2);
        h[(0, 0)] = c64::new(3.0, 0.0);
        h[(1, 1)] = c64::new(-2.0, 0.0);
        let signed = sign_align(&svd_factors(h.as_ref()).unwrap()).unwrap();
        let sorted = signed.sorted();
        assert!((sorted[0] + 2.0).abs() < 1e-14 && (sorted[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn sign_align_recovers_random_hermitian_spectrum() {
        let h = random_hermitian(16, 21);
        let eig = hermitian_eigenvalues(h.as_ref()).unwrap();
        let signed = sign_align(&svd_factors(h.as_ref()).unwrap()).unwrap().sorted();
        for (a, b) in eig.iter().zip(&signed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_align_handles_plus_minus_degeneracy() {
        // diag(1, -1, 2) rotated: σ = 1 is doubly degenerate with mixed signs.
        let d = [1.0, -1.0, 2.0];
        let q = svd_factors(random_matrix(3, 2).as_ref()).unwrap().u;
        let diag = Mat::from_fn(3, 3, |i, j| if i == j { c64::new(d[i], 0.0) } else { c64::new(0.0, 0.0) });
        let h = &q * &diag * q.adjoint();
        let signed = sign_align(&svd_factors(h.as_ref()).unwrap()).unwrap().sorted();
        let expected = [-1.0, 1.0, 2.0];
        for (a, b) in signed.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{signed:?}");
        }
    }

    #[test]
    fn sign_align_rejects_non_hermitian() {
        let h = random_matrix(6, 4);
        assert!(matches!(
            sign_align(&svd_factors(h.as_ref()).unwrap()),
            Err(Error::NonHermitian(_))
        ));
    }

    #[test]
    fn zero_matrix_gets_positive_signs() {
        let h = Mat::<c64>::zeros(4, 4);
        let signed = sign_align(&svd_factors(h.as_ref()).unwrap()).unwrap();
        assert!(signed.values.iter().all(|v| *v == 0.0));
        assert_eq!(singular_values(h.as_ref()).unwrap().values, vec![0.0; 4]);
    }

    #[test]
    fn exact_product_and_quotient_helpers() {
        let a = 1.0 + f64::EPSILON;
        let (p, e) = two_prod(a, a);
        // (1 + ε)² = 1 + 2ε + ε², the last term is below one ulp of p.
        assert_eq!(p, 1.0 + 2.0 * f64::EPSILON);
        assert_eq!(e, f64::EPSILON * f64::EPSILON);
        let r = dd_sqrt((4.0, 0.0));
        assert_eq!(r, (2.0, 0.0));
        assert_eq!(dd_div((1.0, 0.0), (3.0, 0.0)), 1.0 / 3.0);
    }

    #[test]
    fn refined_values_match_diagonal_entries() {
        let d = [0.3, -1.7, 2.25, 1e-3];
        let q = svd_factors(random_matrix(4, 8).as_ref()).unwrap().u;
        let diag = Mat::from_fn(4, 4, |i, j| if i == j { c64::new(d[i], 0.0) } else { c64::new(0.0, 0.0) });
        let h = &q * &diag * q.adjoint();
        let eig = refined_eigenvalues(h.as_ref()).unwrap();
        let mut sorted = d;
        sorted.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(sorted) {
            assert!((a - b).abs() < 1e-14, "{eig:?}");
        }
    }

    #[test]
    fn refined_routes_agree_to_an_ulp() {
        let h = random_hermitian(48, 17);
        let f = svd_factors(h.as_ref()).unwrap();
        let signed = refined_signed_spectrum(h.as_ref(), &f).unwrap();
        let eig = refined_eigenvalues(h.as_ref()).unwrap();
        let plain = hermitian_eigenvalues(h.as_ref()).unwrap();
        for ((a, b), c) in signed.iter().zip(&eig).zip(&plain) {
            assert!((a - b).abs() <= f64::EPSILON * b.abs(), "{a} vs {b}");
            assert!((a - c).abs() < 1e-12);
        }
        let sv = refined_singular_values(h.as_ref(), &f).unwrap();
        for (s, t) in sv.iter().zip(&f.sigma) {
            assert!((s - t).abs() < 1e-12);
        }
    }

    #[test]
    fn refined_singular_values_check_dimensions() {
        let f = svd_factors(random_matrix(4, 1).as_ref()).unwrap();
        assert!(refined_singular_values(random_matrix(5, 1).as_ref(), &f).is_err());
    }
}
