//! Run manifests, seeded parallel ensemble execution, the on-disk spectrum
//! store, sparsity scans and the critical-sparsity fit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::form_factor::{GridSpacing, TimeGrid};
use crate::majorana::{build_majoranas, parity_operator, Sector};
use crate::numeric::{binomial, logspace, mean_and_standard_error};
use crate::sampler::{assemble_hamiltonian, assemble_sector_hamiltonian, sample_couplings, Mode, ModelConfig};
use crate::spacing::{ensemble_mean_r, spacing_ratios, SpacingOptions};
use crate::spectral::{hermitized_singular_values, singular_values, SingularSpectrum, SpectrumSource};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RECORD_MAGIC: [u8; 4] = *b"SVSP";
pub const RECORD_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 8 + 1 + 1 + 8 + 8 + 8;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Fraction of the dense `⟨r_σ⟩` that defines the critical sparsity.
pub const PCRIT_FRACTION: f64 = 0.99;
/// Reference value of `k` in `p_crit = k N / C(N,4)`.
pub const REFERENCE_K: f64 = 1.68;

/// Time grid description as stored in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub spacing: GridSpacing,
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            spacing: GridSpacing::Log,
            t_min: 1e-2,
            t_max: 1e6,
            count: 400,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        match self.spacing {
            GridSpacing::Log => TimeGrid::log(self.t_min, self.t_max, self.count),
            GridSpacing::Linear => TimeGrid::linear(self.t_min, self.t_max, self.count),
        }
    }
}

/// Everything needed to regenerate a run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub n_values: Vec<usize>,
    pub p_values: Vec<f64>,
    pub mode: Mode,
    pub sector: Sector,
    pub n_realizations: u64,
    pub master_seed: u64,
    /// Filter width; `None` picks the size-rescaled default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_trim")]
    pub edge_trim: f64,
    #[serde(default = "default_collapse")]
    pub collapse_degenerate: bool,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_version")]
    pub artifact_version: String,
    /// SHA-256 over all spectrum records in work-item order, filled in by [`run_ensemble`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
}

fn default_trim() -> f64 {
    SpacingOptions::default().edge_trim
}

fn default_collapse() -> bool {
    true
}

fn default_version() -> String {
    ARTIFACT_VERSION.to_string()
}

impl RunManifest {
    pub fn new(n_values: Vec<usize>, p_values: Vec<f64>, mode: Mode, n_realizations: u64, master_seed: u64) -> Self {
        RunManifest {
            n_values,
            p_values,
            mode,
            sector: Sector::Plus,
            n_realizations,
            master_seed,
            alpha: None,
            edge_trim: default_trim(),
            collapse_degenerate: default_collapse(),
            grid: GridSpec::default(),
            artifact_version: default_version(),
            content_hash: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: RunManifest = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always serialisable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.p_values.is_empty() {
            return Err(Error::Config("n_values and p_values must be non-empty".into()));
        }
        if self.n_realizations == 0 {
            return Err(Error::Config("n_realizations must be positive".into()));
        }
        for &n in &self.n_values {
            for &p in &self.p_values {
                ModelConfig::new(n, p, self.mode, self.master_seed, 0)
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            if n > 30 {
                return Err(Error::Config(format!("N = {n} is beyond dense diagonalisation")));
            }
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0) {
                return Err(Error::Config(format!("alpha must be non-negative, got {a}")));
            }
        }
        if !(0.0..0.5).contains(&self.edge_trim) {
            return Err(Error::Config(format!("edge_trim must lie in [0, 0.5), got {}", self.edge_trim)));
        }
        self.grid.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// All `(N, p, index)` work items in canonical order.
    pub fn work_items(&self) -> Vec<ModelConfig> {
        let mut items = Vec::new();
        for &n in &self.n_values {
            for &p in &self.p_values {
                for i in 0..self.n_realizations {
                    items.push(ModelConfig::new(n, p, self.mode, self.master_seed, i));
                }
            }
        }
        items
    }

    pub fn spacing_options(&self) -> SpacingOptions {
        SpacingOptions {
            collapse_degenerate: self.collapse_degenerate,
            ..SpacingOptions::default().with_trim(self.edge_trim)
        }
    }
}

/// Matrix dimension of `sector` for `n` Majoranas.
pub fn sector_dimension(n: usize, sector: Sector) -> usize {
    let full = 1usize << (n / 2);
    match sector {
        Sector::Full => full,
        _ => full / 2,
    }
}

/// Sample → assemble (directly in the sector) → singular values.
pub fn compute_spectrum(config: &ModelConfig, sector: Sector) -> Result<SingularSpectrum> {
    let couplings = sample_couplings(config)?;
    let ms = build_majoranas(config.n)?;
    let h = match sector.parity() {
        Some(parity) => {
            let basis = parity_operator(&ms).sector_basis(parity);
            assemble_sector_hamiltonian(&couplings, &ms, &basis)?
        }
        None => assemble_hamiltonian(&couplings, &ms)?,
    };
    let spectrum = match singular_values(h.as_ref()) {
        Err(Error::Numerical(msg)) => {
            log::warn!(
                "SVD failed for N={} p={} index={} ({msg}); using the Hermitization eigenvalues",
                config.n,
                config.p,
                config.realization_index
            );
            hermitized_singular_values(h.as_ref())?
        }
        other => other?,
    };
    Ok(spectrum.with_source(SpectrumSource {
        config: *config,
        sector,
    }))
}

/// Spectra of realizations `0..n_realizations` of `template`, in index order.
pub fn compute_ensemble(template: &ModelConfig, sector: Sector, n_realizations: u64) -> Result<Vec<SingularSpectrum>> {
    (0..n_realizations)
        .into_par_iter()
        .map(|i| compute_spectrum(&template.with_index(i), sector))
        .collect()
}

/// Header of a binary spectrum record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordHeader {
    pub version: u16,
    pub n: u16,
    pub p: f64,
    pub mode: Mode,
    pub sector: Sector,
    pub seed: u64,
    pub index: u64,
    pub length: u64,
}

impl RecordHeader {
    pub fn for_config(config: &ModelConfig, sector: Sector, length: usize) -> Self {
        RecordHeader {
            version: RECORD_VERSION,
            n: config.n as u16,
            p: config.p,
            mode: config.mode,
            sector,
            seed: config.master_seed,
            index: config.realization_index,
            length: length as u64,
        }
    }
}

/// Little-endian record: magic, version, N, p, mode, sector, seed, index, length, values.
pub fn encode_record(header: &RecordHeader, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&RECORD_MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.extend_from_slice(&header.n.to_le_bytes());
    out.extend_from_slice(&header.p.to_le_bytes());
    out.push(header.mode.code());
    out.push(header.sector.code() as u8);
    out.extend_from_slice(&header.seed.to_le_bytes());
    out.extend_from_slice(&header.index.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_record(bytes: &[u8]) -> std::result::Result<(RecordHeader, Vec<f64>), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if bytes[0..4] != RECORD_MAGIC {
        return Err("bad magic bytes".into());
    }
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u16_at(4);
    if version != RECORD_VERSION {
        return Err(format!("unsupported record version {version}"));
    }
    let mode = Mode::from_code(bytes[16]).ok_or_else(|| format!("unknown mode code {}", bytes[16]))?;
    let sector = Sector::from_code(bytes[17] as i8).ok_or_else(|| format!("unknown sector code {}", bytes[17]))?;
    let header = RecordHeader {
        version,
        n: u16_at(6),
        p: f64::from_bits(u64_at(8)),
        mode,
        sector,
        seed: u64_at(18),
        index: u64_at(26),
        length: u64_at(34),
    };
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != 8 * header.length {
        return Err(format!(
            "header declares {} values but the body holds {} bytes",
            header.length,
            body.len()
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// `out/N{n}/p{p}/r{index}.bin`.
pub fn record_path(out: &Path, config: &ModelConfig) -> PathBuf {
    out.join(format!("N{}", config.n))
        .join(format!("p{:.6e}", config.p))
        .join(format!("r{:06}.bin", config.realization_index))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("record paths have a parent");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("bin.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a record and checks it against the work item that should have produced it.
pub fn read_record(path: &Path, expected: &ModelConfig, sector: Sector) -> Result<SingularSpectrum> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corruption {
        path: path.to_path_buf(),
        reason,
    };
    let (header, values) = decode_record(&bytes).map_err(corrupt)?;
    let want = RecordHeader::for_config(expected, sector, sector_dimension(expected.n, sector));
    if header != want {
        return Err(corrupt(format!("header {header:?} does not match expected {want:?}")));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(corrupt("values are not ascending".into()));
    }
    Ok(SingularSpectrum::new(values)
        .map_err(|e| corrupt(e.to_string()))?
        .with_source(SpectrumSource {
            config: *expected,
            sector,
        }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub written: usize,
    pub skipped: usize,
    pub content_hash: String,
    pub manifest: RunManifest,
}

/// Executes every work item of `manifest` into `out`.
///
/// Each realization is computed on its own RNG stream and written to its
/// own file, so the output is independent of `threads`. With `resume`,
/// existing records are validated and kept; a header mismatch is a
/// corruption error. The manifest, with the content hash filled in, is
/// written last.
pub fn run_ensemble(manifest: &RunManifest, out: &Path, threads: usize, resume: bool) -> Result<RunReport> {
    manifest.validate()?;
    crate::spectral::use_sequential_kernels();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let items = manifest.work_items();
    let sector = manifest.sector;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        items
            .par_iter()
            .map(|cfg| {
                let path = record_path(out, cfg);
                if resume && path.exists() {
                    read_record(&path, cfg, sector)?;
                    return Ok(false);
                }
                let spectrum = compute_spectrum(cfg, sector)?;
                let header = RecordHeader::for_config(cfg, sector, spectrum.len());
                write_atomic(&path, &encode_record(&header, &spectrum.values))?;
                Ok(true)
            })
            .collect()
    });
    let mut written = 0;
    let mut skipped = 0;
    let mut failures = Vec::new();
    for (cfg, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok(true) => written += 1,
            Ok(false) => skipped += 1,
            Err(e) => failures.push((cfg, e)),
        }
    }
    if let Some((cfg, e)) = failures.into_iter().next() {
        log::error!(
            "run aborted at N={} p={} index={}: {} written, {} kept, {} items total",
            cfg.n,
            cfg.p,
            cfg.realization_index,
            written,
            skipped,
            items.len()
        );
        return Err(e);
    }
    let mut hasher = Sha256::new();
    for cfg in &items {
        let path = record_path(out, cfg);
        hasher.update(fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    let content_hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let mut final_manifest = manifest.clone();
    final_manifest.content_hash = Some(content_hash.clone());
    let mpath = out.join(MANIFEST_FILE);
    fs::write(&mpath, final_manifest.to_toml()).map_err(|e| Error::io(&mpath, e))?;
    Ok(RunReport {
        written,
        skipped,
        content_hash,
        manifest: final_manifest,
    })
}

/// Loads the realizations of one `(N, p)` point of a finished run.
pub fn load_spectra(out: &Path, manifest: &RunManifest, n: usize, p: f64) -> Result<Vec<SingularSpectrum>> {
    (0..manifest.n_realizations)
        .map(|i| {
            let cfg = ModelConfig::new(n, p, manifest.mode, manifest.master_seed, i);
            read_record(&record_path(out, &cfg), &cfg, manifest.sector)
        })
        .collect()
}

/// Ensemble `⟨r_σ⟩` over the realizations whose statistic is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleR {
    pub mean: f64,
    /// Standard error over realization-level means.
    pub std_error: f64,
    pub n_valid: usize,
    /// Realizations with fewer than four distinct bulk levels.
    pub n_skipped: usize,
}

/// Spacing options used for ensemble statistics: 10% edge trim with exact
/// degeneracies merged.
pub fn default_spacing_options() -> SpacingOptions {
    SpacingOptions::default().collapsed()
}

/// Pools `⟨r_σ⟩` over an ensemble.
///
/// Very sparse Hamiltonians can leave fewer than four distinct levels; such
/// realizations are skipped and counted. It is an error if none remain.
pub fn ensemble_r<S: AsRef<[f64]> + Sync>(spectra: &[S], opts: &SpacingOptions) -> Result<EnsembleR> {
    let outcomes: Vec<Result<_>> = spectra.par_iter().map(|s| spacing_ratios(s.as_ref(), opts)).collect();
    let mut stats = Vec::with_capacity(outcomes.len());
    let mut n_skipped = 0;
    for o in outcomes {
        match o {
            Ok(s) => stats.push(s),
            Err(Error::InsufficientData(_) | Error::DegenerateSpectrum(_)) => n_skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if stats.is_empty() {
        return Err(Error::InsufficientData(format!(
            "none of the {} realizations has four distinct bulk levels",
            spectra.len()
        )));
    }
    let (mean, std_error) = ensemble_mean_r(&stats)?;
    Ok(EnsembleR {
        mean,
        std_error,
        n_valid: stats.len(),
        n_skipped,
    })
}

/// Default scan grid: 12 log-spaced points per decade from 1 down to the
/// last point not below `0.3 · 24 · 1.68 / N³`.
pub fn default_p_grid(n: usize) -> Vec<f64> {
    let p_min = 0.3 * 24.0 * REFERENCE_K / (n as f64).powi(3);
    let decades = -p_min.log10();
    let count = (12.0 * decades + 1e-9).floor() as usize + 1;
    logspace(1.0, 10f64.powf(-((count - 1) as f64) / 12.0), count)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityScanResult {
    pub n: usize,
    pub mode: Mode,
    pub n_realizations: u64,
    pub master_seed: u64,
    pub edge_trim: f64,
    /// Descending, starting at `p = 1`.
    pub p_grid: Vec<f64>,
    pub r_mean: Vec<f64>,
    pub r_err: Vec<f64>,
    /// Realizations contributing at each `p`.
    pub n_valid: Vec<usize>,
    pub r_dense: f64,
    pub p_crit: f64,
}

impl SparsityScanResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# N={} mode={} n_realizations={} seed={} trim={}\n# r_dense={} p_crit={}\np,r_sigma,std_error,n_valid\n",
            self.n, self.mode, self.n_realizations, self.master_seed, self.edge_trim, self.r_dense, self.p_crit
        );
        for (((p, r), e), v) in self.p_grid.iter().zip(&self.r_mean).zip(&self.r_err).zip(&self.n_valid) {
            out.push_str(&format!("{p},{r},{e},{v}\n"));
        }
        out
    }
}

/// First downward crossing of `fraction · r[0]`, linearly interpolated in `p`.
///
/// `p_grid` must be descending with `p_grid[0] = 1`.
pub fn critical_sparsity(p_grid: &[f64], r: &[f64], fraction: f64) -> Result<f64> {
    if p_grid.len() != r.len() || p_grid.len() < 2 {
        return Err(invalid("p grid and r values must have equal length ≥ 2"));
    }
    let threshold = fraction * r[0];
    for i in 1..r.len() {
        if r[i] < threshold {
            let (p0, p1, r0, r1) = (p_grid[i - 1], p_grid[i], r[i - 1], r[i]);
            return Ok(p0 + (threshold - r0) * (p1 - p0) / (r1 - r0));
        }
    }
    Err(Error::ScanRange(format!(
        "⟨r_σ⟩ never drops below {threshold:.4} down to p = {}",
        p_grid[p_grid.len() - 1]
    )))
}

/// `⟨r_σ⟩(p)` on `p_grid` and the critical sparsity, all `p` sharing the
/// same realization streams.
pub fn scan_sparsity(
    n: usize,
    p_grid: &[f64],
    n_realizations: u64,
    master_seed: u64,
    mode: Mode,
    opts: &SpacingOptions,
) -> Result<SparsityScanResult> {
    let mut grid = p_grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    if grid.first() != Some(&1.0) {
        return Err(invalid("the p grid must include p = 1"));
    }
    if grid.len() < 4 {
        return Err(invalid("the p grid needs at least three points below p = 1"));
    }
    let mut r_mean = Vec::with_capacity(grid.len());
    let mut r_err = Vec::with_capacity(grid.len());
    let mut n_valid = Vec::with_capacity(grid.len());
    for &p in &grid {
        let template = ModelConfig::new(n, p, mode, master_seed, 0);
        let spectra = compute_ensemble(&template, Sector::Plus, n_realizations)?;
        let r = ensemble_r(&spectra, opts)?;
        log::info!(
            "N={n} p={p:.4e}: <r> = {:.4} ± {:.4} ({} skipped)",
            r.mean,
            r.std_error,
            r.n_skipped
        );
        r_mean.push(r.mean);
        r_err.push(r.std_error);
        n_valid.push(r.n_valid);
    }
    let p_crit = critical_sparsity(&grid, &r_mean, PCRIT_FRACTION)?;
    Ok(SparsityScanResult {
        n,
        mode,
        n_realizations,
        master_seed,
        edge_trim: opts.edge_trim,
        r_dense: r_mean[0],
        p_grid: grid,
        r_mean,
        r_err,
        n_valid,
        p_crit,
    })
}

/// `p_crit · C(N,4) / N = k` fitted over several sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcritFit {
    pub k: f64,
    pub points: Vec<(usize, f64)>,
    /// `y_i − k` with `y_i = p_crit,i · C(N_i,4) / N_i`.
    pub residuals: Vec<f64>,
    /// RMS residual divided by `k`.
    pub relative_rms: f64,
}

impl PcritFit {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# k={} relative_rms={}\nN,p_crit,k_point,residual\n", self.k, self.relative_rms);
        for ((n, p), r) in self.points.iter().zip(&self.residuals) {
            out.push_str(&format!("{n},{p},{},{r}\n", self.k + r));
        }
        out
    }
}

pub fn fit_pcrit_scaling(points: &[(usize, f64)]) -> Result<PcritFit> {
    let mut ns: Vec<usize> = points.iter().map(|p| p.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 distinct N, got {}", ns.len())));
    }
    if points.iter().any(|&(n, p)| n < 4 || !(p > 0.0)) {
        return Err(invalid("points need N ≥ 4 and positive p_crit"));
    }
    let ys: Vec<f64> = points
        .iter()
        .map(|&(n, p)| p * binomial(n as u64, 4) / n as f64)
        .collect();
    let (k, _) = mean_and_standard_error(&ys);
    let residuals: Vec<f64> = ys.iter().map(|y| y - k).collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / ys.len() as f64).sqrt();
    Ok(PcritFit {
        k,
        points: points.to_vec(),
        residuals,
        relative_rms: rms / k,
    })
}
