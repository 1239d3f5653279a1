//! Majorana operators in the Jordan-Wigner representation.
//!
//! Every operator built here is a scaled Pauli string `c · X^x Z^z` over
//! `N/2` qubits (bit `k` of a basis index is site `k`). Products of Pauli
//! strings stay Pauli strings, so Hamiltonian assembly never multiplies
//! dense matrices; [`MajoranaSet::matrix`] materialises the dense form on
//! demand.

use std::f64::consts::FRAC_1_SQRT_2;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest supported Majorana count (one `u64` bit per site).
pub const MAX_MAJORANAS: usize = 64;

/// Tolerance for the parity commutator check in [`project_to_sector`],
/// relative to the max-entry norm of the operator.
pub const COMMUTATOR_TOLERANCE: f64 = 1e-10;

/// `scale · i^phase · X^x Z^z`, with `Z` applied first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliString {
    pub x: u64,
    pub z: u64,
    /// Power of `i`, in `0..4`.
    pub phase: u8,
    pub scale: f64,
}

impl PauliString {
    pub fn identity() -> Self {
        PauliString {
            x: 0,
            z: 0,
            phase: 0,
            scale: 1.0,
        }
    }

    pub fn coefficient(&self) -> c64 {
        let unit = match self.phase & 3 {
            0 => c64::new(1.0, 0.0),
            1 => c64::new(0.0, 1.0),
            2 => c64::new(-1.0, 0.0),
            _ => c64::new(0.0, -1.0),
        };
        unit * self.scale
    }

    /// Operator product `self · rhs`.
    pub fn mul(&self, rhs: &PauliString) -> PauliString {
        // Z^{z1} X^{x2} = (-1)^{|z1 & x2|} X^{x2} Z^{z1}
        let swaps = (self.z & rhs.x).count_ones() as u8;
        PauliString {
            x: self.x ^ rhs.x,
            z: self.z ^ rhs.z,
            phase: (self.phase + rhs.phase + 2 * (swaps & 1)) & 3,
            scale: self.scale * rhs.scale,
        }
    }

    /// Image of basis state `|s⟩`: returns `(t, c)` with `O|s⟩ = c|t⟩`.
    #[inline]
    pub fn apply(&self, s: u64) -> (u64, c64) {
        let c = self.coefficient();
        if (self.z & s).count_ones() & 1 == 1 {
            (s ^ self.x, -c)
        } else {
            (s ^ self.x, c)
        }
    }

    /// Dense `dim × dim` matrix.
    pub fn to_dense(&self, dim: usize) -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(dim, dim);
        for s in 0..dim {
            let (t, c) = self.apply(s as u64);
            m[(t as usize, s)] = c;
        }
        m
    }
}

/// The `N` Majorana operators `ψ_1..ψ_N` with `{ψ_a, ψ_b} = δ_ab`.
#[derive(Debug, Clone)]
pub struct MajoranaSet {
    n: usize,
    strings: Vec<PauliString>,
}

/// Builds `ψ_1..ψ_N`. For site `k`: `ψ_{2k+1} = Z_0⋯Z_{k-1} X_k / √2`,
/// `ψ_{2k+2} = Z_0⋯Z_{k-1} Y_k / √2`.
pub fn build_majoranas(n: usize) -> Result<MajoranaSet> {
    if n < 2 || n % 2 != 0 {
        return Err(invalid(format!(
            "Majorana count must be even and at least 2, got {n}"
        )));
    }
    if n > MAX_MAJORANAS {
        return Err(invalid(format!(
            "Majorana count {n} exceeds the supported maximum {MAX_MAJORANAS}"
        )));
    }
    let mut strings = Vec::with_capacity(n);
    for k in 0..n / 2 {
        let string_below = (1u64 << k) - 1;
        let site = 1u64 << k;
        strings.push(PauliString {
            x: site,
            z: string_below,
            phase: 0,
            scale: FRAC_1_SQRT_2,
        });
        // Y = i X Z
        strings.push(PauliString {
            x: site,
            z: string_below | site,
            phase: 1,
            scale: FRAC_1_SQRT_2,
        });
    }
    Ok(MajoranaSet { n, strings })
}

impl MajoranaSet {
    pub fn n_majoranas(&self) -> usize {
        self.n
    }

    pub fn n_sites(&self) -> usize {
        self.n / 2
    }

    /// Hilbert-space dimension `L = 2^(N/2)`.
    pub fn dimension(&self) -> usize {
        1usize << (self.n / 2)
    }

    /// Structured form of `ψ_a`, `a` in `1..=N`.
    pub fn pauli(&self, a: usize) -> Result<&PauliString> {
        if a == 0 || a > self.n {
            return Err(invalid(format!("Majorana index {a} outside 1..={}", self.n)));
        }
        Ok(&self.strings[a - 1])
    }

    /// Ordered product `ψ_{a_1} ψ_{a_2} ⋯`.
    pub fn product(&self, labels: &[usize]) -> Result<PauliString> {
        let mut acc = PauliString::identity();
        for &a in labels {
            acc = acc.mul(self.pauli(a)?);
        }
        Ok(acc)
    }

    /// Dense matrix of `ψ_a`.
    pub fn matrix(&self, a: usize) -> Result<Mat<c64>> {
        Ok(self.pauli(a)?.to_dense(self.dimension()))
    }

    pub fn matrices(&self) -> Vec<Mat<c64>> {
        let dim = self.dimension();
        self.strings.iter().map(|s| s.to_dense(dim)).collect()
    }
}

/// Sign of a fermion-parity eigenspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Plus,
    Minus,
}

impl Parity {
    pub fn sign(self) -> i8 {
        match self {
            Parity::Plus => 1,
            Parity::Minus => -1,
        }
    }
}

/// Which part of the Hilbert space a spectrum lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Plus,
    Minus,
    Full,
}

impl Sector {
    pub fn parity(self) -> Option<Parity> {
        match self {
            Sector::Plus => Some(Parity::Plus),
            Sector::Minus => Some(Parity::Minus),
            Sector::Full => None,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Sector::Plus => 1,
            Sector::Minus => -1,
            Sector::Full => 0,
        }
    }

    pub fn from_code(code: i8) -> Option<Sector> {
        match code {
            1 => Some(Sector::Plus),
            -1 => Some(Sector::Minus),
            0 => Some(Sector::Full),
            _ => None,
        }
    }
}

impl std::fmt::Display for Sector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sector::Plus => "+1",
            Sector::Minus => "-1",
            Sector::Full => "full",
        })
    }
}

impl std::str::FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "+1" | "1" | "plus" | "even" => Ok(Sector::Plus),
            "-1" | "minus" | "odd" => Ok(Sector::Minus),
            "full" | "0" => Ok(Sector::Full),
            other => Err(invalid(format!("unknown sector {other:?}"))),
        }
    }
}

/// Fermion parity `P ∝ ψ_1ψ_2⋯ψ_N`, Hermitian with `P² = I`.
///
/// In the Jordan-Wigner basis `P = Z_0 Z_1 ⋯`, so `P|s⟩ = (-1)^{popcount(s)}|s⟩`.
#[derive(Debug, Clone)]
pub struct ParityOperator {
    n_sites: usize,
    string: PauliString,
}

pub fn parity_operator(ms: &MajoranaSet) -> ParityOperator {
    let labels: Vec<usize> = (1..=ms.n_majoranas()).collect();
    let raw = ms.product(&labels).expect("labels are in range");
    debug_assert_eq!(raw.x, 0, "product of all Majoranas is diagonal");
    // Strip the phase i^phase and the 2^{-N/2} scale; the remaining sign
    // is fixed by requiring +1 on the empty state.
    let string = PauliString {
        x: 0,
        z: raw.z,
        phase: 0,
        scale: 1.0,
    };
    ParityOperator {
        n_sites: ms.n_sites(),
        string,
    }
}

impl ParityOperator {
    pub fn dimension(&self) -> usize {
        1usize << self.n_sites
    }

    pub fn sector_dims(&self) -> (usize, usize) {
        let half = self.dimension() / 2;
        (half, half)
    }

    pub fn pauli(&self) -> &PauliString {
        &self.string
    }

    /// Eigenvalue (`±1`) on basis state `s`.
    #[inline]
    pub fn eigenvalue(&self, s: u64) -> i8 {
        if (self.string.z & s).count_ones() & 1 == 1 {
            -1
        } else {
            1
        }
    }

    pub fn diagonal(&self) -> Vec<i8> {
        (0..self.dimension() as u64)
            .map(|s| self.eigenvalue(s))
            .collect()
    }

    pub fn matrix(&self) -> Mat<c64> {
        self.string.to_dense(self.dimension())
    }

    pub fn sector_basis(&self, parity: Parity) -> SectorBasis {
        SectorBasis::new(self, parity)
    }
}

/// Computational basis states of one parity sector, in increasing order.
#[derive(Debug, Clone)]
pub struct SectorBasis {
    parity: Parity,
    states: Vec<u64>,
    /// Full-space index → position in `states`, or `u32::MAX` outside the sector.
    position: Vec<u32>,
}

impl SectorBasis {
    fn new(p: &ParityOperator, parity: Parity) -> Self {
        let dim = p.dimension();
        let mut states = Vec::with_capacity(dim / 2);
        let mut position = vec![u32::MAX; dim];
        for s in 0..dim as u64 {
            if p.eigenvalue(s) == parity.sign() {
                position[s as usize] = states.len() as u32;
                states.push(s);
            }
        }
        SectorBasis {
            parity,
            states,
            position,
        }
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    #[inline]
    pub fn position(&self, s: u64) -> Option<usize> {
        match self.position[s as usize] {
            u32::MAX => None,
            i => Some(i as usize),
        }
    }
}

pub(crate) fn max_abs(m: MatRef<'_, c64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

/// Restricts `h` to the parity eigenspace `parity`.
///
/// Fails with [`Error::SymmetryViolation`] if `‖[H, P]‖_max` exceeds
/// [`COMMUTATOR_TOLERANCE`]` · ‖H‖_max`.
pub fn project_to_sector(
    h: MatRef<'_, c64>,
    p: &ParityOperator,
    parity: Parity,
) -> Result<Mat<c64>> {
    let dim = p.dimension();
    if h.nrows() != dim || h.ncols() != dim {
        return Err(invalid(format!(
            "operator is {}x{}, parity acts on dimension {dim}",
            h.nrows(),
            h.ncols()
        )));
    }
    let diag = p.diagonal();
    // P is diagonal, so [H, P]_ij = H_ij (d_j - d_i).
    let mut commutator = 0.0f64;
    for j in 0..dim {
        for i in 0..dim {
            if diag[i] != diag[j] {
                commutator = commutator.max(2.0 * h[(i, j)].norm());
            }
        }
    }
    let tolerance = COMMUTATOR_TOLERANCE * max_abs(h);
    if commutator > tolerance {
        return Err(Error::SymmetryViolation {
            commutator,
            tolerance,
        });
    }
    let basis = p.sector_basis(parity);
    let states = basis.states();
    Ok(Mat::from_fn(states.len(), states.len(), |i, j| {
        h[(states[i] as usize, states[j] as usize)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anticommutator_defect(ms: &MajoranaSet) -> f64 {
        let mats = ms.matrices();
        let dim = ms.dimension();
        let mut worst = 0.0f64;
        for a in 0..mats.len() {
            for b in 0..mats.len() {
                let ac = &mats[a] * &mats[b] + &mats[b] * &mats[a];
                for i in 0..dim {
                    for j in 0..dim {
                        let target = if a == b && i == j { 1.0 } else { 0.0 };
                        worst = worst.max((ac[(i, j)] - c64::new(target, 0.0)).norm());
                    }
                }
            }
        }
        worst
    }

    #[test]
    fn smallest_clifford_pair() {
        let ms = build_majoranas(2).unwrap();
        assert_eq!(ms.dimension(), 2);
        let m = ms.matrices();
        let sq = &m[0] * &m[0];
        assert!((sq[(0, 0)] - c64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((sq[(1, 1)] - c64::new(0.5, 0.0)).norm() < 1e-15);
        let ac = &m[0] * &m[1] + &m[1] * &m[0];
        assert!(max_abs(ac.as_ref()) < 1e-15);
    }

    #[test]
    fn clifford_table_n8() {
        let ms = build_majoranas(8).unwrap();
        assert_eq!(ms.dimension(), 16);
        assert!(anticommutator_defect(&ms) <= 1e-14);
    }

    #[test]
    fn off_diagonal_anticommutation_n12() {
        let ms = build_majoranas(12).unwrap();
        let a = ms.matrix(3).unwrap();
        let b = ms.matrix(7).unwrap();
        let ac = &a * &b + &b * &a;
        assert!(max_abs(ac.as_ref()) <= 1e-14);
    }

    #[test]
    fn majoranas_hermitian_and_traceless() {
        let ms = build_majoranas(6).unwrap();
        for m in ms.matrices() {
            let adj = m.adjoint().to_owned();
            assert!(max_abs((&m - &adj).as_ref()) < 1e-15);
            let tr: c64 = (0..m.nrows()).map(|i| m[(i, i)]).sum();
            assert!(tr.norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(matches!(build_majoranas(7), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_majoranas(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_majoranas(66), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_majoranas(10).unwrap().matrices();
        let b = build_majoranas(10).unwrap().matrices();
        for (x, y) in a.iter().zip(&b) {
            assert!(x == y);
        }
    }

    #[test]
    fn structured_product_matches_dense_product() {
        let ms = build_majoranas(8).unwrap();
        let mats = ms.matrices();
        let labels = [2, 5, 6, 8];
        let structured = ms.product(&labels).unwrap().to_dense(ms.dimension());
        let dense = &mats[1] * &mats[4] * &mats[5] * &mats[7];
        assert!(max_abs((&structured - &dense).as_ref()) < 1e-15);
    }

    #[test]
    fn parity_n4_is_balanced_diagonal() {
        let ms = build_majoranas(4).unwrap();
        let p = parity_operator(&ms);
        let diag = p.diagonal();
        assert_eq!(diag.iter().filter(|&&d| d == 1).count(), 2);
        assert_eq!(diag.iter().filter(|&&d| d == -1).count(), 2);
        let m = p.matrix();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(m[(i, j)], c64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn parity_is_proportional_to_majorana_product() {
        let ms = build_majoranas(8).unwrap();
        let p = parity_operator(&ms).matrix();
        let mats = ms.matrices();
        let mut prod = mats[0].clone();
        for m in &mats[1..] {
            prod = &prod * m;
        }
        // ψ_1⋯ψ_N = (i/2)^{N/2} P
        let factor = c64::new(0.0, 0.5).powu(4);
        let expected = &p * faer::Scale(factor);
        assert!(max_abs((&prod - &expected).as_ref()) < 1e-15);
        let sq = &p * &p;
        assert!(max_abs((&sq - Mat::<c64>::identity(16, 16)).as_ref()) < 1e-15);
    }

    #[test]
    fn parity_trace_vanishes_n8() {
        let p = parity_operator(&build_majoranas(8).unwrap());
        let tr: i64 = p.diagonal().iter().map(|&d| d as i64).sum();
        assert_eq!(tr, 0);
        assert_eq!(p.sector_dims(), (8, 8));
    }

    #[test]
    fn parity_commutes_with_four_body_monomials() {
        let ms = build_majoranas(8).unwrap();
        let p = parity_operator(&ms).matrix();
        for labels in [[1, 2, 3, 4], [1, 3, 6, 8], [2, 4, 5, 7]] {
            let mono = ms.product(&labels).unwrap().to_dense(ms.dimension());
            let c = &p * &mono - &mono * &p;
            assert!(max_abs(c.as_ref()) < 1e-15);
        }
    }

    #[test]
    fn projecting_identity_gives_identity() {
        let ms = build_majoranas(6).unwrap();
        let p = parity_operator(&ms);
        let id = Mat::<c64>::identity(8, 8);
        for parity in [Parity::Plus, Parity::Minus] {
            let block = project_to_sector(id.as_ref(), &p, parity).unwrap();
            assert!(block == Mat::<c64>::identity(4, 4));
        }
    }

    #[test]
    fn projection_rejects_parity_breaking_operator() {
        let ms = build_majoranas(6).unwrap();
        let p = parity_operator(&ms);
        let psi = ms.matrix(1).unwrap();
        assert!(matches!(
            project_to_sector(psi.as_ref(), &p, Parity::Plus),
            Err(Error::SymmetryViolation { .. })
        ));
    }

    #[test]
    fn sector_basis_positions_roundtrip() {
        let p = parity_operator(&build_majoranas(10).unwrap());
        let basis = p.sector_basis(Parity::Minus);
        assert_eq!(basis.len(), 16);
        for (i, &s) in basis.states().iter().enumerate() {
            assert_eq!(basis.position(s), Some(i));
            assert_eq!(p.eigenvalue(s), -1);
        }
    }
}
