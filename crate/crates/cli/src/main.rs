use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use svsyk_core::complexity::{mean_complexity_plateau, plateau_table_csv, singular_complexity};
use svsyk_core::ensemble::{
    compute_ensemble, compute_spectrum, default_p_grid, encode_record, ensemble_r, fit_pcrit_scaling,
    load_spectra, run_ensemble, scan_sparsity, GridSpec, RecordHeader, RunManifest, MANIFEST_FILE,
};
use svsyk_core::form_factor::{
    default_alpha, fit_ramp, fit_thouless_scaling, sigma_ff, thouless_time, CurveMeta, GridSpacing,
    THOULESS_THRESHOLD,
};
use svsyk_core::majorana::Sector;
use svsyk_core::rmt::{reference_mean_r, reference_spacing_curve, EnsembleClass};
use svsyk_core::sampler::{sample_couplings, Mode, ModelConfig};
use svsyk_core::spacing::{spacing_histogram, HistogramBins, SpacingOptions};
use svsyk_core::spectral::SingularSpectrum;

#[derive(Parser)]
#[command(name = "svsyk", version, about = "Singular-value statistics of sparse non-Hermitian SYK ensembles")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the couplings of one realization.
    Sample(One),
    /// Singular spectrum of one realization (CSV, or a binary record with --out).
    Spectrum(One),
    /// Execute a run manifest into a spectrum store.
    Run(RunArgs),
    /// Ensemble spacing ratio.
    Rstat(Stat),
    /// Unit-mean spacing histogram.
    Hist(HistArgs),
    /// Filtered singular form factor.
    Sff(SffArgs),
    /// Thouless times over a p sweep and the scaling fit.
    Thouless(ThoulessArgs),
    /// Singular complexity curve, or the plateau table with --plateau.
    Complexity(ComplexityArgs),
    /// Sparsity scans and the critical-sparsity fit.
    Pcrit(PcritArgs),
    /// Sampled random-matrix reference statistics.
    RmtRef(RmtArgs),
}

#[derive(Args)]
struct Model {
    #[arg(long, default_value_t = 18)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value = "non-hermitian")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "+1", allow_hyphen_values = true)]
    sector: Sector,
}

#[derive(Args)]
struct One {
    #[command(flatten)]
    model: Model,
    /// Realization index.
    #[arg(long, default_value_t = 0)]
    index: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Manifest file; flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    p: Vec<f64>,
    #[arg(long, default_value = "non-hermitian")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    samples: u64,
    #[arg(long, default_value = "+1", allow_hyphen_values = true)]
    sector: Sector,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: bool,
}

/// Ensemble source: computed on the fly, or read from a finished run.
#[derive(Args)]
struct Ensemble {
    #[command(flatten)]
    model: Model,
    #[arg(long, default_value_t = 100)]
    samples: u64,
    /// Read spectra from this run directory instead of computing them.
    #[arg(long)]
    from: Option<PathBuf>,
}

#[derive(Args)]
struct Stat {
    #[command(flatten)]
    ensemble: Ensemble,
    #[arg(long, default_value_t = 0.1)]
    trim: f64,
    /// Keep exactly degenerate levels as separate levels.
    #[arg(long)]
    no_collapse: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HistArgs {
    #[command(flatten)]
    stat: Stat,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value_t = 4.0)]
    upper: f64,
}

#[derive(Args)]
struct Grid {
    #[arg(long, default_value = "log")]
    spacing: String,
    #[arg(long, default_value_t = 1e-2)]
    t_min: f64,
    #[arg(long, default_value_t = 1e6)]
    t_max: f64,
    #[arg(long, default_value_t = 400)]
    points: usize,
}

impl Grid {
    fn spec(&self) -> Result<GridSpec> {
        let spacing = match self.spacing.as_str() {
            "log" => GridSpacing::Log,
            "linear" => GridSpacing::Linear,
            other => bail!("unknown grid spacing {other:?}"),
        };
        Ok(GridSpec {
            spacing,
            t_min: self.t_min,
            t_max: self.t_max,
            count: self.points,
        })
    }
}

#[derive(Args)]
struct SffArgs {
    #[command(flatten)]
    ensemble: Ensemble,
    #[command(flatten)]
    grid: Grid,
    /// Filter width (default: size-rescaled reference value).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a JSON manifest of the curve here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ThoulessArgs {
    #[arg(long, default_value_t = 18)]
    n: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<f64>,
    #[arg(long, default_value = "non-hermitian")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    samples: u64,
    #[command(flatten)]
    grid: Grid,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = THOULESS_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ComplexityArgs {
    #[command(flatten)]
    ensemble: Ensemble,
    #[command(flatten)]
    grid: Grid,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Print plateau values for every p in this list instead of a curve.
    #[arg(long, value_delimiter = ',')]
    plateau: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct PcritArgs {
    #[arg(long, value_delimiter = ',', default_value = "14,16,18")]
    n: Vec<usize>,
    #[arg(long, default_value = "non-hermitian")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: u64,
    #[arg(long, default_value_t = 0.1)]
    trim: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RmtArgs {
    #[arg(long, default_value = "gue")]
    class: EnsembleClass,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    samples: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Emit the spacing histogram instead of ⟨r⟩.
    #[arg(long)]
    hist: bool,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn config(model: &Model, index: u64) -> ModelConfig {
    ModelConfig::new(model.n, model.p, model.mode, model.seed, index)
}

impl Ensemble {
    fn spectra(&self) -> Result<Vec<SingularSpectrum>> {
        let m = &self.model;
        match &self.from {
            Some(dir) => {
                let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
                Ok(load_spectra(dir, &manifest, m.n, m.p)?)
            }
            None => Ok(compute_ensemble(&config(m, 0), m.sector, self.samples)?),
        }
    }

    fn meta(&self) -> CurveMeta {
        CurveMeta {
            n: self.model.n,
            p: self.model.p,
            mode: self.model.mode,
        }
    }

    fn header(&self, n_realizations: usize) -> String {
        let m = &self.model;
        format!(
            "# N={} p={} mode={} sector={} seed={} n_realizations={}\n",
            m.n, m.p, m.mode, m.sector, m.seed, n_realizations
        )
    }
}

impl Stat {
    fn options(&self) -> SpacingOptions {
        SpacingOptions {
            collapse_degenerate: !self.no_collapse,
            ..SpacingOptions::default().with_trim(self.trim)
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global()?;
    }
    svsyk_core::spectral::use_sequential_kernels();
    match cli.command {
        Command::Sample(a) => {
            let c = sample_couplings(&config(&a.model, a.index))?;
            emit(a.out.as_deref(), &c.to_text())
        }
        Command::Spectrum(a) => {
            let cfg = config(&a.model, a.index);
            let s = compute_spectrum(&cfg, a.model.sector)?;
            match a.out {
                Some(path) => {
                    let header = RecordHeader::for_config(&cfg, a.model.sector, s.len());
                    fs::write(&path, encode_record(&header, &s.values))
                        .with_context(|| format!("writing {}", path.display()))
                }
                None => emit(None, &s.to_csv()),
            }
        }
        Command::Run(a) => run(a, cli.threads),
        Command::Rstat(a) => {
            let spectra = a.ensemble.spectra()?;
            let r = ensemble_r(&spectra, &a.options())?;
            let text = format!(
                "{}# trim={} tolerance={} collapse={}\nr_sigma,std_error,n_valid,n_skipped\n{},{},{},{}\n",
                a.ensemble.header(spectra.len()),
                a.trim,
                a.options().degeneracy_tolerance,
                !a.no_collapse,
                r.mean,
                r.std_error,
                r.n_valid,
                r.n_skipped
            );
            emit(a.out.as_deref(), &text)
        }
        Command::Hist(a) => {
            let spectra = a.stat.ensemble.spectra()?;
            let bins = HistogramBins {
                count: a.bins,
                upper: a.upper,
            };
            let h = spacing_histogram(&spectra, bins, &a.stat.options())?;
            let m = &a.stat.ensemble.model;
            let meta = [
                ("N", m.n.to_string()),
                ("p", m.p.to_string()),
                ("mode", m.mode.to_string()),
                ("sector", m.sector.to_string()),
                ("trim", a.stat.trim.to_string()),
                ("tolerance", a.stat.options().degeneracy_tolerance.to_string()),
                ("collapse", (!a.stat.no_collapse).to_string()),
                ("n_realizations", spectra.len().to_string()),
            ];
            emit(a.stat.out.as_deref(), &h.to_csv(&meta))
        }
        Command::Sff(a) => {
            let spectra = a.ensemble.spectra()?;
            let grid = a.grid.spec()?.build()?;
            let m = &a.ensemble.model;
            let alpha = a.alpha.unwrap_or_else(|| default_alpha(m.n, m.mode));
            let curve = sigma_ff(&spectra, &grid, alpha)?.with_meta(a.ensemble.meta());
            if let Some(path) = &a.manifest {
                let ramp = fit_ramp(&curve).ok();
                emit(Some(path), &curve.manifest_json(ramp.as_ref(), None))?;
            }
            emit(a.out.as_deref(), &curve.to_csv())
        }
        Command::Thouless(a) => thouless(a),
        Command::Complexity(a) => complexity(a),
        Command::Pcrit(a) => {
            let opts = SpacingOptions::default().collapsed().with_trim(a.trim);
            let mut text = String::new();
            let mut points = Vec::new();
            for &n in &a.n {
                let scan = scan_sparsity(n, &default_p_grid(n), a.samples, a.seed, a.mode, &opts)?;
                points.push((n, scan.p_crit));
                text.push_str(&scan.to_csv());
            }
            if points.len() >= 3 {
                text.push_str(&fit_pcrit_scaling(&points)?.to_csv());
            } else {
                log::warn!("k fit needs at least three sizes");
            }
            emit(a.out.as_deref(), &text)
        }
        Command::RmtRef(a) => {
            let text = if a.hist {
                let bins = HistogramBins {
                    count: a.bins,
                    upper: 4.0,
                };
                let h = reference_spacing_curve(a.class, a.dim, a.samples as usize, a.seed, bins)?;
                h.to_csv(&[
                    ("class", a.class.to_string()),
                    ("dim", a.dim.to_string()),
                    ("samples", a.samples.to_string()),
                ])
            } else {
                let (r, se) = reference_mean_r(a.class, a.dim, a.samples as usize, a.seed)?;
                format!(
                    "# class={} dim={} samples={} seed={}\nr,std_error,reference\n{r},{se},{}\n",
                    a.class,
                    a.dim,
                    a.samples,
                    a.seed,
                    a.class.reference_r()
                )
            };
            emit(a.out.as_deref(), &text)
        }
    }
}

fn run(a: RunArgs, threads: Option<usize>) -> Result<()> {
    let manifest = match &a.config {
        Some(path) => RunManifest::load(path)?,
        None => {
            let mut m = RunManifest::new(a.n.clone(), a.p.clone(), a.mode, a.samples, a.seed);
            m.sector = a.sector;
            m.alpha = a.alpha;
            if let Some(t) = a.trim {
                m.edge_trim = t;
            }
            m.validate()?;
            m
        }
    };
    println!("# resolved manifest\n{}", manifest.to_toml());
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = run_ensemble(&manifest, &a.out, threads, a.resume)?;
    println!(
        "# written={} kept={} content_hash={}",
        report.written, report.skipped, report.content_hash
    );
    Ok(())
}

fn thouless(a: ThoulessArgs) -> Result<()> {
    let grid = a.grid.spec()?.build()?;
    let alpha = a.alpha.unwrap_or_else(|| default_alpha(a.n, a.mode));
    let mut text = format!(
        "# N={} mode={} seed={} n_realizations={} alpha={alpha} threshold={}\np,t_dip,t_plateau,slope,t_th,status\n",
        a.n, a.mode, a.seed, a.samples, a.threshold
    );
    let mut points = Vec::new();
    for &p in &a.p {
        let cfg = ModelConfig::new(a.n, p, a.mode, a.seed, 0);
        let spectra = compute_ensemble(&cfg, Sector::Plus, a.samples)?;
        let curve = sigma_ff(&spectra, &grid, alpha)?;
        let row = fit_ramp(&curve).and_then(|ramp| Ok((ramp, thouless_time(&curve, &ramp, a.threshold)?)));
        match row {
            Ok((ramp, t)) => {
                points.push((p, t));
                text.push_str(&format!(
                    "{p},{},{},{},{t},ok\n",
                    ramp.t_dip, ramp.t_plateau, ramp.slope
                ));
            }
            Err(e) => {
                log::warn!("p={p}: {e}");
                text.push_str(&format!("{p},,,,,{}\n", e.to_string().replace(',', ";")));
            }
        }
    }
    match fit_thouless_scaling(&points) {
        Ok(fit) => {
            text.push_str(&fit.to_csv());
            if let Some(path) = &a.manifest {
                let meta = CurveMeta {
                    n: a.n,
                    p: f64::NAN,
                    mode: a.mode,
                };
                emit(Some(path), &fit.manifest_json(Some(meta), alpha))?;
            }
        }
        Err(e) => log::warn!("scaling fit: {e}"),
    }
    emit(a.out.as_deref(), &text)
}

fn complexity(a: ComplexityArgs) -> Result<()> {
    let m = &a.ensemble.model;
    if let Some(ps) = &a.plateau {
        let mut rows = Vec::new();
        for &p in ps {
            let cfg = ModelConfig::new(m.n, p, m.mode, m.seed, 0);
            let spectra = compute_ensemble(&cfg, m.sector, a.ensemble.samples)?;
            let (c, se) = mean_complexity_plateau(&spectra)?;
            rows.push((p, c, se));
        }
        return emit(a.out.as_deref(), &plateau_table_csv(&rows, m.n));
    }
    let spectra = a.ensemble.spectra()?;
    let grid = a.grid.spec()?.build()?;
    let curve = singular_complexity(&spectra, &grid, a.beta)?.with_meta(a.ensemble.meta());
    if let Some(path) = &a.manifest {
        emit(Some(path), &curve.manifest_json())?;
    }
    emit(a.out.as_deref(), &curve.to_csv())
}
