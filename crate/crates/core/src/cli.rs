//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a command fails at run time or rejects
//! its inputs, 2 for usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::forward::{noise_sigma_for_snr, BornOperator, ChannelSubset};
use crate::geometry::{
    make_spiral_array, FrequencyGrid, ImagingScenario, PulseSpectrum, Vec3, VoxelGrid, PRESET_ARRAY_RADIUS,
    PRESET_ARRAY_SEED, SPEED_OF_LIGHT,
};
use crate::io;
use crate::metrics::{self, format_db};
use crate::phantom::Phantom;
use crate::solver::{self, Composition, IterationRecord, MinibatchComposition, SolverConfig, Termination};

#[derive(Debug, Parser)]
#[command(name = "nfmimo", version, about = "Near-field MIMO radar imaging toolkit")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a scenario document.
    ScenarioInit(ScenarioInitArgs),
    /// Simulate measurements of a phantom; the truth volume is written beside them.
    Simulate(SimulateArgs),
    /// Reconstruct a reflectivity volume from measurements.
    Reconstruct(ReconstructArgs),
    /// PSNR of a reconstruction against a reference volume.
    Psnr(PsnrArgs),
    /// Sweep minibatch compositions and seeds, writing a CSV of runtime and PSNR.
    Benchmark(BenchmarkArgs),
    /// Print scenario dimensions.
    Info(InfoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    #[value(name = "paper-v")]
    PaperV,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["preset", "custom"]))]
struct ScenarioInitArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Build from the geometry flags below.
    #[arg(long)]
    custom: bool,
    /// START_HZ,STOP_HZ,COUNT
    #[arg(long, conflicts_with = "preset", default_value = "4e9,16e9,11")]
    freq: String,
    /// X,Y,Z in metres
    #[arg(long, conflicts_with = "preset", allow_hyphen_values = true, default_value = "0,0,0.5")]
    center: String,
    /// X,Y,Z in metres; axes with a single voxel default to 0
    #[arg(long, conflicts_with = "preset")]
    extent: Option<String>,
    /// NX,NY,NZ
    #[arg(long, conflicts_with = "preset", default_value = "61,61,21")]
    dims: String,
    #[arg(long, conflicts_with = "preset", default_value_t = 16)]
    n_tx: usize,
    #[arg(long, conflicts_with = "preset", default_value_t = 9)]
    n_rx: usize,
    /// Spiral array radius in metres.
    #[arg(long, conflicts_with = "preset", default_value_t = PRESET_ARRAY_RADIUS)]
    radius: f64,
    #[arg(long, conflicts_with = "preset", default_value_t = PRESET_ARRAY_SEED)]
    array_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// points:K, bar, cross or file:PATH
    #[arg(long)]
    phantom: String,
    /// Complex noise standard deviation per channel.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "snr_db")]
    noise: Option<f64>,
    /// Noise level as measurement SNR in dB instead of --noise.
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Pgm,
    Spgm,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, allow_negative_numbers = true, default_value_t = solver::DEFAULT_ETA)]
    eta: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = solver::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = solver::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = solver::DEFAULT_MAX_ITERS)]
    max_iters: usize,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long, value_enum, default_value = "pgm")]
    method: Method,
    /// F,TX,RX minibatch composition (spgm only).
    #[arg(long)]
    batch: Option<String>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, allow_negative_numbers = true)]
    time_budget_s: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON solve report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write normalized magnitude slices to PREFIX_z<k>.csv.
    #[arg(long)]
    slices: Option<PathBuf>,
    #[arg(long)]
    allow_fingerprint_mismatch: bool,
}

#[derive(Debug, Args)]
struct PsnrArgs {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    /// Semicolon-separated list, e.g. "4,4,3;11,16,9".
    #[arg(long)]
    compositions: String,
    /// Comma-separated minibatch seeds.
    #[arg(long, default_value = "0")]
    seeds: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    allow_fingerprint_mismatch: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["scenario", "preset"]))]
struct InfoArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    eprintln!("{}", repro_line(&cli));
    let outcome = match &cli.command {
        Command::ScenarioInit(a) => scenario_init(a),
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Psnr(a) => psnr(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Info(a) => info(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn repro_line(cli: &Cli) -> String {
    let seed = match &cli.command {
        Command::Simulate(a) => a.seed.to_string(),
        Command::Reconstruct(a) => a.seed.to_string(),
        Command::Benchmark(a) => a.seeds.clone(),
        _ => "-".to_string(),
    };
    let digest = Sha256::digest(format!("{:?}", cli.command).as_bytes());
    let hash: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!(
        "nfmimo {} seed={seed} config={hash}",
        env!("CARGO_PKG_VERSION")
    )
}

fn parse_list<T: std::str::FromStr>(s: &str, n: usize, what: &str) -> CmdResult<Vec<T>> {
    let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<T>()).collect();
    if parts.len() != n || parts.iter().any(|p| p.is_err()) {
        return usage(format!("{what} needs {n} comma-separated numbers, got `{s}`"));
    }
    Ok(parts.into_iter().filter_map(|p| p.ok()).collect())
}

fn scenario_init(a: &ScenarioInitArgs) -> CmdResult {
    let scenario = match a.preset {
        Some(Preset::PaperV) => ImagingScenario::paper_preset(),
        None => custom_scenario(a)?,
    };
    io::write_scenario(&scenario, &a.out)?;
    println!(
        "wrote {} (M = {}, N = {})",
        a.out.display(),
        scenario.num_channels(),
        scenario.num_voxels()
    );
    Ok(())
}

fn custom_scenario(a: &ScenarioInitArgs) -> CmdResult<ImagingScenario> {
    let freq = parse_list::<f64>(&a.freq, 3, "--freq")?;
    if freq[2].fract() != 0.0 || freq[2] < 0.0 {
        return usage(format!("frequency count must be a whole number, got {}", freq[2]));
    }
    let center = parse_list::<f64>(&a.center, 3, "--center")?;
    let dims = parse_list::<usize>(&a.dims, 3, "--dims")?;
    let dims = [dims[0], dims[1], dims[2]];
    let extent = match &a.extent {
        Some(e) => {
            let e = parse_list::<f64>(e, 3, "--extent")?;
            [e[0], e[1], e[2]]
        }
        None => {
            let preset = ImagingScenario::paper_preset().voxels().extent();
            std::array::from_fn(|i| if dims[i] == 1 { 0.0 } else { preset[i] })
        }
    };
    let array = make_spiral_array(a.n_tx, a.n_rx, a.radius, a.array_seed)?;
    let frequencies = FrequencyGrid::new(freq[0], freq[1], freq[2] as usize)?;
    let voxels = VoxelGrid::new(Vec3::new(center[0], center[1], center[2]), extent, dims)?;
    Ok(ImagingScenario::new(
        array,
        frequencies,
        voxels,
        PulseSpectrum::default(),
        SPEED_OF_LIGHT,
    )?)
}

/// `dir/meas.nfms` -> `dir/meas_truth.nfmv`
fn truth_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_truth.nfmv"))
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let scenario = io::read_scenario(&a.scenario)?;
    let phantom: Phantom = a.phantom.parse()?;
    let truth = phantom.generate(scenario.voxels(), a.seed)?;
    let op = BornOperator::new(&scenario);
    let sigma = match (a.noise, a.snr_db) {
        (Some(s), _) => s,
        (None, Some(db)) => {
            let clean = op.forward(&truth, &ChannelSubset::all(op.num_channels()))?;
            noise_sigma_for_snr(&clean, db)
        }
        (None, None) => 0.0,
    };
    let y = op.simulate(&truth, sigma, a.seed)?;
    io::write_measurements(&y, &a.out)?;
    let truth_out = truth_path(&a.out);
    io::write_volume(&truth, &truth_out)?;
    println!(
        "wrote {} ({} channels, noise sigma {sigma:e}) and {}",
        a.out.display(),
        y.len(),
        truth_out.display()
    );
    Ok(())
}

fn load_inputs(
    scenario: &Path,
    measurements: &Path,
    allow_mismatch: bool,
) -> CmdResult<(ImagingScenario, crate::forward::MeasurementSet)> {
    let scenario = io::read_scenario(scenario)?;
    let y = io::read_measurements(measurements, None)?;
    match y.check_scenario(&scenario) {
        Ok(()) => {}
        Err(Error::FingerprintMismatch) if allow_mismatch && y.len() == scenario.num_channels() => {
            eprintln!("warning: measurement fingerprint does not match the scenario; continuing");
        }
        Err(e) => return Err(e.into()),
    }
    Ok((scenario, y))
}

fn solver_config(s: &SolverArgs, seed: u64, composition: Composition, budget: Option<Duration>) -> SolverConfig {
    SolverConfig {
        eta: s.eta,
        alpha: s.alpha,
        max_iters: s.max_iters,
        tol: s.tol,
        seed,
        composition,
        time_budget: budget,
    }
}

#[derive(Serialize)]
struct ReportConfig {
    eta: f64,
    alpha: f64,
    tol: f64,
    max_iters: usize,
    seed: u64,
    time_budget_s: Option<f64>,
}

#[derive(Serialize)]
struct ReconstructReport<'a> {
    version: &'static str,
    method: Method,
    composition: MinibatchComposition,
    batch_size: usize,
    scenario_fingerprint: String,
    config: ReportConfig,
    iterations: usize,
    wall_time_s: f64,
    seconds_per_iteration: f64,
    termination: Termination,
    per_iteration: &'a [IterationRecord],
}

fn reconstruct(a: &ReconstructArgs) -> CmdResult {
    let composition = match (a.method, &a.batch) {
        (Method::Spgm, None) => return usage("--method spgm requires --batch f,tx,rx"),
        (Method::Pgm, Some(_)) => return usage("--batch only applies to --method spgm"),
        (Method::Spgm, Some(b)) => match b.parse::<MinibatchComposition>() {
            Ok(c) => Composition::Minibatch(c),
            Err(e) => return usage(e.to_string()),
        },
        (Method::Pgm, None) => Composition::Full,
    };
    let budget = match a.time_budget_s {
        Some(t) if !(t > 0.0) || !t.is_finite() => {
            return usage(format!("--time-budget-s must be positive, got {t}"))
        }
        Some(t) => Some(Duration::from_secs_f64(t)),
        None => None,
    };
    let (scenario, y) = load_inputs(&a.scenario, &a.measurements, a.allow_fingerprint_mismatch)?;
    let config = solver_config(&a.solver, a.seed, composition, budget);
    config.validate(&scenario)?;
    let op = BornOperator::new(&scenario);
    let report = solver::solve(&op, y.values(), &config, |_, _| {})?;
    io::write_volume(&report.volume, &a.out)?;
    if let Some(prefix) = &a.slices {
        io::export_slices_csv(&report.volume, prefix)?;
    }
    if let Some(path) = &a.report {
        let doc = ReconstructReport {
            version: env!("CARGO_PKG_VERSION"),
            method: a.method,
            composition: match composition {
                Composition::Full => MinibatchComposition::full(&scenario),
                Composition::Minibatch(c) => c,
            },
            batch_size: report.per_iteration.first().map_or(0, |r| r.batch_size),
            scenario_fingerprint: scenario.fingerprint().to_string(),
            config: ReportConfig {
                eta: config.eta,
                alpha: config.alpha,
                tol: config.tol,
                max_iters: config.max_iters,
                seed: config.seed,
                time_budget_s: a.time_budget_s,
            },
            iterations: report.iterations,
            wall_time_s: report.wall_time.as_secs_f64(),
            seconds_per_iteration: report.seconds_per_iteration(),
            termination: report.termination,
            per_iteration: &report.per_iteration,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Resource(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    println!(
        "{} iterations, {:.3} s, termination {}",
        report.iterations,
        report.wall_time.as_secs_f64(),
        report.termination
    );
    Ok(())
}

fn psnr(a: &PsnrArgs) -> CmdResult {
    let recon = io::read_volume_data(&a.recon)?;
    let reference = io::read_volume_data(&a.reference)?;
    if recon.dims != reference.dims {
        return Err(Error::shape(format!(
            "grid mismatch: recon {:?} vs reference {:?}",
            recon.dims, reference.dims
        ))
        .into());
    }
    let grid = reference.index_grid();
    let r = metrics::psnr_vs_reference(&recon.into_volume(grid)?, &reference.into_volume(grid)?)?;
    println!("psnr_db {}", format_db(r.psnr_db));
    println!("rmse {:?}", r.rmse);
    Ok(())
}

fn benchmark(a: &BenchmarkArgs) -> CmdResult {
    let mut compositions = Vec::new();
    for part in a.compositions.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        match part.parse::<MinibatchComposition>() {
            Ok(c) => compositions.push(c),
            Err(e) => return usage(e.to_string()),
        }
    }
    if compositions.is_empty() {
        return usage("--compositions needs at least one f,tx,rx entry");
    }
    let mut seeds = Vec::new();
    for part in a.seeds.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.parse::<u64>() {
            Ok(s) => seeds.push(s),
            Err(_) => return usage(format!("bad seed `{part}`")),
        }
    }
    let (scenario, y) = load_inputs(&a.scenario, &a.measurements, a.allow_fingerprint_mismatch)?;
    for c in &compositions {
        c.validate(&scenario)?;
    }
    let base = solver_config(&a.solver, 0, Composition::Full, None);
    base.validate(&scenario)?;
    let op = BornOperator::new(&scenario);
    let out = metrics::run_sweep(&op, &y, &base, &compositions, &seeds)?;
    metrics::write_sweep_csv(&out.records, &a.out)?;

    let mut table = format!(
        "reference PGM: {} iterations, {:.3} s\n{:<14} {:>6} {:>6} {:>10} {:>12} {:>12}\n",
        out.reference.iterations,
        out.reference.wall_time.as_secs_f64(),
        "composition",
        "B",
        "seed",
        "iterations",
        "runtime_s",
        "psnr_db"
    );
    for r in &out.records {
        let _ = writeln!(
            table,
            "{:<14} {:>6} {:>6} {:>10} {:>12.3} {:>12}",
            r.composition().to_string(),
            r.batch_size,
            r.seed,
            r.iterations,
            r.runtime_s,
            format_db(r.psnr_db)
        );
    }
    print!("{table}");
    Ok(())
}

fn info(a: &InfoArgs) -> CmdResult {
    let scenario = match (&a.scenario, a.preset) {
        (Some(p), _) => io::read_scenario(p)?,
        (None, _) => ImagingScenario::paper_preset(),
    };
    let [nx, ny, nz] = scenario.voxels().dims();
    let f = scenario.frequencies();
    let table_bytes = 16 * scenario.n_freq() * (scenario.n_tx() + scenario.n_rx()) * scenario.num_voxels();
    println!("frequencies {} ({:e} .. {:e} Hz)", f.len(), f.start_hz(), f.stop_hz());
    println!("transmitters {}", scenario.n_tx());
    println!("receivers {}", scenario.n_rx());
    println!("voxels {nx}x{ny}x{nz}");
    println!("M {}", scenario.num_channels());
    println!("N {}", scenario.num_voxels());
    println!("phasor_table_bytes {table_bytes}");
    println!("fingerprint {}", scenario.fingerprint());
    Ok(())
}
