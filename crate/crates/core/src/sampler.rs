//! Disorder realizations of the sparse SYK couplings and Hamiltonian assembly.

use std::fmt::Write as _;
use std::str::FromStr;

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::majorana::{MajoranaSet, PauliString, SectorBasis, MAX_MAJORANAS};

/// Hermiticity class of the sampled Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `J` and `M` both drawn.
    NonHermitian,
    /// `M = 0`.
    Hermitian,
    /// `J = 0`.
    AntiHermitian,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::NonHermitian => 0,
            Mode::Hermitian => 1,
            Mode::AntiHermitian => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Mode> {
        match code {
            0 => Some(Mode::NonHermitian),
            1 => Some(Mode::Hermitian),
            2 => Some(Mode::AntiHermitian),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NonHermitian => "non-hermitian",
            Mode::Hermitian => "hermitian",
            Mode::AntiHermitian => "anti-hermitian",
        }
    }

    /// Number of independent Gaussian components per coupling.
    pub fn components(self) -> usize {
        match self {
            Mode::NonHermitian => 2,
            Mode::Hermitian | Mode::AntiHermitian => 1,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "non-hermitian" | "nonhermitian" | "nh" => Ok(Mode::NonHermitian),
            "hermitian" | "h" => Ok(Mode::Hermitian),
            "anti-hermitian" | "antihermitian" | "ah" => Ok(Mode::AntiHermitian),
            other => Err(invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// One point of the disorder ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub p: f64,
    pub mode: Mode,
    pub master_seed: u64,
    pub realization_index: u64,
}

impl ModelConfig {
    pub fn new(n: usize, p: f64, mode: Mode, master_seed: u64, realization_index: u64) -> Self {
        ModelConfig {
            n,
            p,
            mode,
            master_seed,
            realization_index,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 || self.n > MAX_MAJORANAS {
            return Err(invalid(format!(
                "N must be even in 4..={MAX_MAJORANAS}, got {}",
                self.n
            )));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(invalid(format!("sparsity p must lie in (0, 1], got {}", self.p)));
        }
        Ok(())
    }

    /// Coupling variance `⟨J²⟩ = ⟨M²⟩ = 6 / (p N³)`.
    pub fn coupling_variance(&self) -> f64 {
        6.0 / (self.p * (self.n as f64).powi(3))
    }

    pub fn with_index(mut self, realization_index: u64) -> Self {
        self.realization_index = realization_index;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }
}

/// Realization-specific RNG: one ChaCha stream per realization index.
pub fn realization_rng(master_seed: u64, realization_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(realization_index);
    rng
}

/// Number of 4-subsets of `n` labels.
pub fn n_tuples(n: usize) -> u64 {
    let n = n as u64;
    if n < 4 {
        return 0;
    }
    n * (n - 1) * (n - 2) * (n - 3) / 24
}

/// Calls `f(a, b, c, d)` for every `1 ≤ a < b < c < d ≤ n`, lexicographically.
pub fn for_each_tuple(n: usize, mut f: impl FnMut([u8; 4])) {
    for a in 1..=n {
        for b in a + 1..=n {
            for c in b + 1..=n {
                for d in c + 1..=n {
                    f([a as u8, b as u8, c as u8, d as u8]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// Majorana labels, 1-based and strictly increasing.
    pub labels: [u8; 4],
    pub j: f64,
    pub m: f64,
}

impl Coupling {
    pub fn amplitude(&self) -> c64 {
        c64::new(self.j, self.m)
    }
}

/// The non-zero terms `x_abcd (J_abcd + i M_abcd)` of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRealization {
    pub config: ModelConfig,
    pub entries: Vec<Coupling>,
}

/// Samples one realization.
///
/// Every tuple consumes exactly three draws (inclusion uniform, then the
/// two Gaussians) whatever `p` and the mode are, so realizations with the
/// same seed and index are nested across `p`: lowering `p` removes terms and
/// rescales the survivors by `1/√p`.
pub fn sample_couplings(config: &ModelConfig) -> Result<CouplingRealization> {
    config.validate()?;
    let mut rng = realization_rng(config.master_seed, config.realization_index);
    let sigma = config.coupling_variance().sqrt();
    let mut entries = Vec::with_capacity((n_tuples(config.n) as f64 * config.p * 1.2) as usize + 4);
    for_each_tuple(config.n, |labels| {
        let u: f64 = rng.random();
        let zj: f64 = rng.sample(StandardNormal);
        let zm: f64 = rng.sample(StandardNormal);
        if u < config.p {
            let (j, m) = match config.mode {
                Mode::NonHermitian => (sigma * zj, sigma * zm),
                Mode::Hermitian => (sigma * zj, 0.0),
                Mode::AntiHermitian => (0.0, sigma * zm),
            };
            entries.push(Coupling { labels, j, m });
        }
    });
    Ok(CouplingRealization {
        config: *config,
        entries,
    })
}

impl CouplingRealization {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn terms(&self, ms: &MajoranaSet) -> Result<Vec<(PauliString, c64)>> {
        let n = ms.n_majoranas();
        self.entries
            .iter()
            .map(|e| {
                let l = e.labels;
                if l.iter().any(|&a| a == 0 || a as usize > n) {
                    return Err(invalid(format!(
                        "coupling labels {l:?} outside 1..={n}"
                    )));
                }
                let mono = ms.product(&l.map(|a| a as usize))?;
                Ok((mono, e.amplitude()))
            })
            .collect()
    }

    /// Flat text form: a `#` header line, then one `a b c d J M` line per term.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# N={} p={} mode={} seed={} index={}\n",
            c.n, c.p, c.mode, c.master_seed, c.realization_index
        );
        for e in &self.entries {
            let [a, b, cc, d] = e.labels;
            let _ = writeln!(out, "{a} {b} {cc} {d} {} {}", e.j, e.m);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| invalid("coupling file lacks a '#' header line"))?;
        let mut n = None;
        let mut p = None;
        let mut mode = None;
        let mut seed = None;
        let mut index = None;
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| invalid(format!("malformed header field {field:?}")))?;
            let bad = || invalid(format!("malformed header value {field:?}"));
            match key {
                "N" => n = Some(value.parse::<usize>().map_err(|_| bad())?),
                "p" => p = Some(value.parse::<f64>().map_err(|_| bad())?),
                "mode" => mode = Some(value.parse::<Mode>()?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad())?),
                "index" => index = Some(value.parse::<u64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let missing = |k: &str| invalid(format!("header lacks {k}"));
        let config = ModelConfig {
            n: n.ok_or_else(|| missing("N"))?,
            p: p.ok_or_else(|| missing("p"))?,
            mode: mode.ok_or_else(|| missing("mode"))?,
            master_seed: seed.ok_or_else(|| missing("seed"))?,
            realization_index: index.ok_or_else(|| missing("index"))?,
        };
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let bad = || invalid(format!("malformed coupling line {}: {line:?}", lineno + 2));
            if cols.len() != 6 {
                return Err(bad());
            }
            let mut labels = [0u8; 4];
            for (slot, col) in labels.iter_mut().zip(&cols[..4]) {
                *slot = col.parse().map_err(|_| bad())?;
            }
            if !labels.windows(2).all(|w| w[0] < w[1]) {
                return Err(bad());
            }
            entries.push(Coupling {
                labels,
                j: cols[4].parse().map_err(|_| bad())?,
                m: cols[5].parse().map_err(|_| bad())?,
            });
        }
        Ok(CouplingRealization { config, entries })
    }
}

/// Dense `H = Σ (J + iM) ψ_a ψ_b ψ_c ψ_d` on the full `2^(N/2)` space.
pub fn assemble_hamiltonian(c: &CouplingRealization, ms: &MajoranaSet) -> Result<Mat<c64>> {
    let terms = c.terms(ms)?;
    let dim = ms.dimension();
    let mut h = Mat::<c64>::zeros(dim, dim);
    for (mono, amp) in &terms {
        for s in 0..dim as u64 {
            let (t, coef) = mono.apply(s);
            h[(t as usize, s as usize)] += coef * amp;
        }
    }
    Ok(h)
}

/// The parity block of `H` on `basis`, built directly from the couplings.
///
/// Equal to `project_to_sector(assemble_hamiltonian(c, ms), ..)` but costs
/// `O(terms · L/2)` with no full-space matrix.
pub fn assemble_sector_hamiltonian(
    c: &CouplingRealization,
    ms: &MajoranaSet,
    basis: &SectorBasis,
) -> Result<Mat<c64>> {
    let terms = c.terms(ms)?;
    let dim = basis.len();
    let mut h = Mat::<c64>::zeros(dim, dim);
    for (mono, amp) in &terms {
        for (col, &s) in basis.states().iter().enumerate() {
            let (t, coef) = mono.apply(s);
            let row = basis
                .position(t)
                .expect("four-body monomials preserve fermion parity");
            h[(row, col)] += coef * amp;
        }
    }
    Ok(h)
}
