//! Command-line front end: theory evaluation, dephasing Monte Carlo,
//! ensemble simulation, and scaling sweeps.
//!
//! Exit codes: 0 success, 1 config error, 2 physics-domain error
//! (a requested quantity is undefined for the parameters), 3
//! numerical-validity error (the computation ran but cannot be trusted).

mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{require_positive, FileConfig, KernelSpec};
use latdiff::dynamics::SimConfig;
use latdiff::ensemble::{
    fit_diffusion, loglog_slope, mc_dephasing, run_ensemble, scaling_sweep, SweepPoint,
};
use latdiff::theory::{self, TheoryParams};
use latdiff::{Error, KernelShape, Result};
use output::{CsvFile, CsvValue};

#[derive(Parser)]
#[command(
    name = "latdiff",
    version,
    about = "Quantum wavepacket spreading on a noisy 1D lattice: dephasing theory vs ensemble Monte Carlo"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic diffusion coefficient, asymptotic limits, and dephasing time
    Theory(TheoryCmd),
    /// Dephasing correlation: closed form against Monte Carlo phase accumulation
    Dephasing(DephasingCmd),
    /// Ensemble simulation, sigma^2(t), and the fitted diffusion coefficient
    Simulate(SimulateCmd),
    /// Scaling sweep over a (W, tau) grid and collapse onto f(W tau)
    Collapse(CollapseCmd),
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Kernel shape: triangular | exponential | white | tabulated
    #[arg(long)]
    shape: Option<String>,
    /// Noise magnitude W (energy, hbar = 1)
    #[arg(long = "W")]
    w: Option<f64>,
    /// Noise correlation time tau
    #[arg(long)]
    tau: Option<f64>,
    /// White-noise strength gamma = integral of C
    #[arg(long)]
    gamma: Option<f64>,
    /// Two-column CSV (time,value) defining a tabulated kernel
    #[arg(long)]
    table: Option<String>,
    /// Nearest-neighbor tunneling amplitude
    #[arg(long = "T")]
    tunneling: Option<f64>,
    /// Output directory for CSV files
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    workers: Option<usize>,
    /// Flat JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryCmd {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct DephasingCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Sampling step for the phase accumulation
    #[arg(long)]
    dt: Option<f64>,
    /// Largest time separation on the grid
    #[arg(long)]
    tmax: Option<f64>,
    /// Monte Carlo sample count
    #[arg(long)]
    samples: Option<usize>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Integrator step
    #[arg(long)]
    dt: Option<f64>,
    /// Total evolution time
    #[arg(long)]
    tmax: Option<f64>,
    /// Lattice size (odd; default: auto-sized from the predicted spread)
    #[arg(long)]
    sites: Option<usize>,
    /// Time between recorded snapshots (default: tmax/100)
    #[arg(long)]
    snapshot_interval: Option<f64>,
    /// Boundary-mass validity limit
    #[arg(long)]
    boundary_mass_limit: Option<f64>,
    /// Number of noise realizations
    #[arg(long)]
    realizations: Option<usize>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CollapseCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// Correlation times of the grid, comma separated
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// Noise magnitudes of the grid, comma separated
    #[arg(long = "Ws", value_delimiter = ',')]
    ws: Option<Vec<f64>>,
    /// Realizations per grid point
    #[arg(long)]
    realizations: Option<usize>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidKernel(_)
        | Error::UnsampleableKernel
        | Error::NoiseResolution { .. }
        | Error::WindowMismatch { .. } => 1,
        Error::WhiteNoisePointwise
        | Error::UndefinedBeta
        | Error::NegativeLag(_)
        | Error::BallisticRegime
        | Error::Domain(_) => 2,
        Error::NumericalBlowup(_)
        | Error::BadProfile(_)
        | Error::LagTooLarge { .. }
        | Error::WindowTooShort { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<i32> {
    let workers = match &cli.command {
        Command::Theory(c) => c.common.workers_resolved()?,
        Command::Dephasing(c) => c.common.workers_resolved()?,
        Command::Simulate(c) => c.common.workers_resolved()?,
        Command::Collapse(c) => c.common.workers_resolved()?,
    };
    let dispatch = || match cli.command {
        Command::Theory(cmd) => cmd_theory(cmd),
        Command::Dephasing(cmd) => cmd_dephasing(cmd),
        Command::Simulate(cmd) => cmd_simulate(cmd),
        Command::Collapse(cmd) => cmd_collapse(cmd),
    };
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(dispatch)
        }
        None => dispatch(),
    }
}

impl CommonOpts {
    fn file(&self) -> Result<FileConfig> {
        FileConfig::load(self.config.as_deref())
    }

    fn workers_resolved(&self) -> Result<Option<usize>> {
        let file = self.file()?;
        let workers = self.workers.or(file.workers);
        if workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(workers)
    }

    fn kernel_spec(&self, file: &FileConfig) -> Result<KernelSpec> {
        let shape = self
            .shape
            .clone()
            .or_else(|| file.shape.clone())
            .ok_or_else(|| Error::Config("missing kernel shape (--shape or config)".into()))?;
        Ok(KernelSpec {
            shape,
            w: self.w.or(file.w),
            tau: self.tau.or(file.tau),
            gamma: self.gamma.or(file.gamma),
            table: self.table.clone().or_else(|| file.table.clone()),
        })
    }

    fn tunneling(&self, file: &FileConfig) -> Result<f64> {
        require_positive(self.tunneling.or(file.tunneling).unwrap_or(1.0), "T")
    }

    fn out_dir(&self, file: &FileConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| file.out.clone().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

fn cmd_theory(cmd: TheoryCmd) -> Result<i32> {
    let file = cmd.common.file()?;
    let spec = cmd.common.kernel_spec(&file)?;
    let kernel = spec.build()?;
    let tunneling = cmd.common.tunneling(&file)?;
    let out_dir = cmd.common.out_dir(&file);

    if kernel.is_ballistic() {
        return Err(Error::BallisticRegime);
    }
    let params = TheoryParams::new(tunneling, kernel.clone())?;
    let d = theory::predict_diffusion(&params)?;
    let d_short = theory::diffusion_short_corr_limit(&params)?;
    let d_long = kernel
        .magnitude()
        .map(|w| theory::diffusion_long_corr_limit(w, tunneling))
        .transpose()?;
    let beta = kernel.beta().ok();
    let x = match (kernel.magnitude(), kernel.corr_time()) {
        (Some(w), Some(tau)) => Some(w * tau),
        _ => None,
    };
    let regime = theory::classify_regime(&kernel);
    let tau_phi = theory::dephasing_time(&kernel)?;

    let provenance = format!("latdiff theory {} T={tunneling}", spec.provenance());
    let mut csv = CsvFile::create(
        &out_dir,
        "theory.csv",
        &provenance,
        "D,D_short_limit,D_long_limit,beta,x,regime,tau_phi",
    )?;
    csv.row(&[
        d.into(),
        d_short.into(),
        d_long.into(),
        beta.into(),
        x.into(),
        CsvValue::Str(regime.to_string()),
        tau_phi.into(),
    ])?;
    let path = csv.finish()?;

    println!(
        "D = {d} (regime: {regime}{})",
        match x {
            Some(x) => format!(", x = W*tau = {x}"),
            None => String::new(),
        }
    );
    println!("short-correlation limit = {d_short}");
    if let Some(dl) = d_long {
        println!("long-correlation limit  = {dl}");
    }
    println!("tau_phi = {tau_phi}");
    if !params.perturbative_ok() {
        eprintln!(
            "warning: T/W = {:.3} > 0.2; prediction is outside its validity regime",
            params.validity_ratio()
        );
    }
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_dephasing(cmd: DephasingCmd) -> Result<i32> {
    let file = cmd.common.file()?;
    let spec = cmd.common.kernel_spec(&file)?;
    let kernel = spec.build()?;
    let out_dir = cmd.common.out_dir(&file);
    let dt = require_positive(
        cmd.dt
            .or(file.dt)
            .ok_or_else(|| Error::Config("missing --dt".into()))?,
        "dt",
    )?;
    let t_max = require_positive(
        cmd.tmax
            .or(file.tmax)
            .ok_or_else(|| Error::Config("missing --tmax".into()))?,
        "tmax",
    )?;
    let samples = cmd.samples.or(file.samples).unwrap_or(10_000);
    let seed = cmd.seed.or(file.seed).unwrap_or(1);

    let points = mc_dephasing(&kernel, dt, t_max, samples, seed)?;
    let provenance = format!(
        "latdiff dephasing {} dt={dt} tmax={t_max} samples={samples} seed={seed}",
        spec.provenance()
    );
    let mut csv = CsvFile::create(
        &out_dir,
        "dephasing.csv",
        &provenance,
        "delta_t,c_phi_analytic,c_phi_mc_re,c_phi_mc_im,stderr,stderr_im",
    )?;
    let mut worst_z = 0.0f64;
    for p in &points {
        let analytic = kernel.dephasing_correlation(p.lag)?;
        if p.stderr_re > 0.0 {
            worst_z = worst_z.max((p.mean_re - analytic).abs() / p.stderr_re);
        }
        csv.row(&[
            p.lag.into(),
            analytic.into(),
            p.mean_re.into(),
            p.mean_im.into(),
            p.stderr_re.into(),
            p.stderr_im.into(),
        ])?;
    }
    let path = csv.finish()?;
    println!(
        "{} grid points, {samples} samples; worst |mc - analytic| = {worst_z:.2} stderr",
        points.len()
    );
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_simulate(cmd: SimulateCmd) -> Result<i32> {
    let file = cmd.common.file()?;
    let spec = cmd.common.kernel_spec(&file)?;
    let kernel = spec.build()?;
    let tunneling = cmd.common.tunneling(&file)?;
    let out_dir = cmd.common.out_dir(&file);
    let dt = require_positive(
        cmd.dt
            .or(file.dt)
            .ok_or_else(|| Error::Config("missing --dt".into()))?,
        "dt",
    )?;
    let t_max = require_positive(
        cmd.tmax
            .or(file.tmax)
            .ok_or_else(|| Error::Config("missing --tmax".into()))?,
        "tmax",
    )?;
    let realizations = cmd.realizations.or(file.realizations).unwrap_or(100);
    let seed = cmd.seed.or(file.seed).unwrap_or(1);
    let snapshot_interval = cmd
        .snapshot_interval
        .or(file.snapshot_interval)
        .unwrap_or(t_max / 100.0);
    let n_sites = match cmd.sites.or(file.sites) {
        Some(n) => n,
        None => SimConfig::auto_sites(tunneling, &kernel, t_max)?,
    };

    let mut config = SimConfig::new(
        tunneling,
        kernel.clone(),
        n_sites,
        dt,
        t_max,
        snapshot_interval,
    )?;
    if let Some(limit) = cmd.boundary_mass_limit.or(file.boundary_mass_limit) {
        config = config.with_boundary_mass_limit(require_positive(limit, "boundary_mass_limit")?);
    }

    let d_theory = match theory::predict_diffusion(&TheoryParams::new(tunneling, kernel.clone())?) {
        Ok(d) => Some(d),
        Err(Error::BallisticRegime) => {
            println!("ballistic regime (no noise): expect sigma(t) = sqrt(2) T t, no diffusion prediction");
            None
        }
        Err(e) => return Err(e),
    };

    let stats = run_ensemble(&config, realizations, seed)?;
    let provenance = format!(
        "latdiff simulate {} T={tunneling} dt={dt} tmax={} sites={} snapshot_interval={} realizations={realizations} seed={seed} boundary_mass_limit={}",
        spec.provenance(),
        config.t_max,
        config.n_sites,
        config.snapshot_interval,
        config.boundary_mass_limit,
    );

    let mut sigma = CsvFile::create(
        &out_dir,
        "sigma.csv",
        &provenance,
        "time,sigma_squared,stderr,boundary_mass_max",
    )?;
    for i in 0..stats.times.len() {
        sigma.row(&[
            stats.times[i].into(),
            stats.sigma_squared[i].into(),
            stats.sigma_sq_stderr[i].into(),
            stats.boundary_mass_max[i].into(),
        ])?;
    }
    sigma.finish()?;

    // a handful of profile snapshots across the valid range
    let n_snap = stats.times.len();
    let mut picks: Vec<usize> = (0..6).map(|i| i * (n_snap - 1) / 5).collect();
    picks.dedup();
    for &i in &picks {
        let name = format!("profile_t{}.csv", stats.times[i]);
        let mut prof = CsvFile::create(&out_dir, &name, &provenance, "site_offset,probability")?;
        let center = (config.n_sites - 1) as i64 / 2;
        for (j, &p) in stats.mean_profile[i].iter().enumerate() {
            prof.row(&[CsvValue::Int(j as i64 - center), p.into()])?;
        }
        prof.finish()?;
    }

    let fit = fit_diffusion(&stats);
    let mut fit_csv = CsvFile::create(
        &out_dir,
        "fit.csv",
        &provenance,
        "D,stderr_D,t_lo,t_hi,r_squared,flag",
    )?;
    match &fit {
        Ok(est) => {
            fit_csv.row(&[
                est.d.into(),
                est.stderr.into(),
                est.window.0.into(),
                est.window.1.into(),
                est.r_squared.into(),
                CsvValue::Str(est.quality.to_string()),
            ])?;
            fit_csv.finish()?;
            println!(
                "D_numeric = {} +- {} ({}, R^2 = {:.6}, window {}..{})",
                est.d, est.stderr, est.quality, est.r_squared, est.window.0, est.window.1
            );
            if let Some(dt) = d_theory {
                println!("D_theory  = {dt}");
                println!("ratio D_numeric/D_theory = {}", est.d / dt);
            }
        }
        Err(e) => {
            fit_csv.row(&[
                CsvValue::Empty,
                CsvValue::Empty,
                CsvValue::Empty,
                CsvValue::Empty,
                CsvValue::Empty,
                CsvValue::Str(format!("unfit: {e}")),
            ])?;
            fit_csv.finish()?;
            println!("no diffusion fit: {e}");
        }
    }
    println!(
        "wrote sigma.csv, fit.csv and {} profiles to {}",
        picks.len(),
        out_dir.display()
    );

    if let Some(t) = stats.truncated_at {
        eprintln!(
            "boundary mass exceeded {} at t = {t}; results truncated to t < {t}",
            config.boundary_mass_limit
        );
        return Ok(3);
    }
    Ok(0)
}

fn cmd_collapse(cmd: CollapseCmd) -> Result<i32> {
    let file = cmd.common.file()?;
    let spec_shape = cmd
        .common
        .shape
        .clone()
        .or_else(|| file.shape.clone())
        .unwrap_or_else(|| "triangular".into());
    let shape = match spec_shape.as_str() {
        "triangular" => KernelShape::Triangular,
        "exponential" => KernelShape::Exponential,
        other => {
            return Err(Error::Config(format!(
                "collapse supports triangular | exponential, got '{other}'"
            )));
        }
    };
    let tunneling = cmd.common.tunneling(&file)?;
    let out_dir = cmd.common.out_dir(&file);
    // default grid spans both asymptotic flanks and the crossover
    let taus = cmd
        .taus
        .or(file.taus)
        .unwrap_or_else(|| vec![0.01, 0.1, 1.0]);
    let ws = cmd
        .ws
        .or(file.ws)
        .unwrap_or_else(|| vec![2.0, 5.0, 10.0, 20.0]);
    for &v in taus.iter().chain(ws.iter()) {
        require_positive(v, "grid value")?;
    }
    let realizations = cmd.realizations.or(file.realizations).unwrap_or(50);
    let seed = cmd.seed.or(file.seed).unwrap_or(1);

    let points = scaling_sweep(shape, &taus, &ws, tunneling, realizations, seed)?;

    let provenance = format!(
        "latdiff collapse shape={spec_shape} T={tunneling} taus={} Ws={} realizations={realizations} seed={seed}",
        join(&taus),
        join(&ws),
    );
    let mut csv = CsvFile::create(
        &out_dir,
        "collapse.csv",
        &provenance,
        "x,f_numeric,f_numeric_err,f_theory,flag,W,tau",
    )?;
    let slope_small = flank_slope(&points, |x| x <= 0.1);
    let slope_large = flank_slope(&points, |x| x >= 5.0);
    if let Some(s) = slope_small {
        csv.line(&format!("# small-x flank slope: {s}"))?;
    }
    if let Some(s) = slope_large {
        csv.line(&format!("# large-x flank slope: {s}"))?;
    }
    for p in &points {
        let flag = match (&p.quality, &p.note) {
            (Some(q), None) => q.to_string(),
            (Some(q), Some(note)) => format!("{q}: {note}"),
            (None, Some(note)) => format!("failed: {note}"),
            (None, None) => "failed".into(),
        };
        csv.row(&[
            p.x.into(),
            p.f_numeric.into(),
            p.f_numeric_err.into(),
            p.f_theory.into(),
            CsvValue::Str(flag),
            p.magnitude.into(),
            p.corr_time.into(),
        ])?;
        println!(
            "x = {:<8} f_numeric = {:<12} f_theory = {:<12} {}",
            p.x,
            p.f_numeric.map_or("-".into(), |f| format!("{f:.5}")),
            format!("{:.5}", p.f_theory),
            p.note.as_deref().unwrap_or(""),
        );
    }
    let path = csv.finish()?;

    match slope_small {
        Some(s) => println!("small-x flank (x <= 0.1) log-log slope: {s:.3}"),
        None => eprintln!("warning: fewer than two points with x <= 0.1; no small-x slope fit"),
    }
    match slope_large {
        Some(s) => println!("large-x flank (x >= 5) log-log slope: {s:.3}"),
        None => eprintln!("warning: fewer than two points with x >= 5; no large-x slope fit"),
    }
    println!("wrote {}", path.display());
    Ok(0)
}

fn flank_slope(points: &[SweepPoint], in_flank: impl Fn(f64) -> bool) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| in_flank(p.x))
        .filter_map(|p| p.f_numeric.map(|f| (p.x, f)))
        .collect();
    loglog_slope(&pts).map(|fit| fit.slope)
}

fn join(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
