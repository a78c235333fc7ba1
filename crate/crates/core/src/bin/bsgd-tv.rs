//! `bsgd-tv`: simulate a fan-beam scan, run solvers on it, analyze step sizes.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bsgd_tv::config::RunSettings;
use bsgd_tv::linalg::{load_vector, save_vector};
use bsgd_tv::sim::{simulate, FanBeamGeometry};
use bsgd_tv::spectral::{
    closed_form_spectral_radius, largest_eigenvalue, mode_radius, normal_matrix_eigenvalues, step_bound,
    DENSE_COLUMN_LIMIT,
};
use bsgd_tv::tv::{ImageGrid, LayoutKind, PixelLayout};
use bsgd_tv::{plot, run_solver, BlockOperator, ConvergenceTrace, Error, Problem, SolverKind, SparseMatrix};

const MATRIX_FILE: &str = "matrix.txt";
const PHANTOM_FILE: &str = "phantom.txt";
const PHANTOM_PGM: &str = "phantom.pgm";
const CLEAN_FILE: &str = "y_clean.txt";
const NOISY_FILE: &str = "y_noisy.txt";
const PLOT_FILE: &str = "convergence.svg";

#[derive(Parser)]
#[command(name = "bsgd-tv", version, about = "Block stochastic gradient descent with TV for CT reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom, system matrix and measurements.
    Simulate(SimulateArgs),
    /// Run solvers on a simulated problem and write traces.
    Run(RunArgs),
    /// Report the largest eigenvalue of A^T A and the admissible step range.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Number of projection angles over a full turn.
    #[arg(long, default_value_t = 36)]
    angles: usize,
    /// Detector bins per projection (default about 1.5 x size).
    #[arg(long)]
    detectors: Option<usize>,
    /// Pixel side length; scales the matrix entries.
    #[arg(long)]
    pixel_size: Option<f64>,
    /// Target SNR of the noisy measurements in dB.
    #[arg(long, default_value_t = 17.7, conflicts_with = "no_noise")]
    snr_db: f64,
    /// Copy the clean measurements as the noisy ones.
    #[arg(long)]
    no_noise: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = LayoutArg::Quadtree)]
    layout: LayoutArg,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LayoutArg {
    Quadtree,
    RowMajor,
}

impl From<LayoutArg> for LayoutKind {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Quadtree => LayoutKind::Quadtree,
            LayoutArg::RowMajor => LayoutKind::RowMajor,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Directory holding the files written by `simulate`.
    #[arg(long, default_value = ".")]
    data_dir: PathBuf,
    /// Measurement file (default: the noisy measurements in the data directory).
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Solvers to run: bsgd, ista, gd, admm or all (comma separated).
    #[arg(long, value_delimiter = ',')]
    solver: Option<Vec<String>>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Block partition as MxN.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Halve the step until the sufficient-decrease test passes.
    #[arg(long)]
    enforce_decrease: bool,
    /// Start every prox solve from zero.
    #[arg(long)]
    cold_prox: bool,
    #[arg(long)]
    prox_iters: Option<usize>,
    #[arg(long)]
    prox_tol: Option<f64>,
    /// ADMM penalty.
    #[arg(long)]
    rho: Option<f64>,
    /// CG steps per ADMM subproblem.
    #[arg(long)]
    cg_iters: Option<usize>,
    /// Epochs between trace samples.
    #[arg(long)]
    sample_every: Option<usize>,
    #[arg(long, env = "BSGD_WORKERS")]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    /// Also write a two-panel SVG of all traces.
    #[arg(long)]
    plot: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Matrix file in triplet format.
    #[arg(long, default_value = MATRIX_FILE)]
    matrix: PathBuf,
    /// Step length to check.
    #[arg(long, default_value_t = 6e-4)]
    mu: f64,
    #[arg(long, default_value_t = 1e-10)]
    power_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    power_iters: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn cmd_simulate(a: SimulateArgs) -> bsgd_tv::Result<()> {
    let mut geom = FanBeamGeometry::for_size(a.size);
    geom.num_angles = a.angles;
    if let Some(d) = a.detectors {
        geom.detector_count = d;
    }
    if let Some(p) = a.pixel_size {
        geom.pixel_size = p;
    }
    geom.layout = a.layout.into();
    let snr = if a.no_noise { f64::INFINITY } else { a.snr_db };
    let scan = simulate(&geom, snr, a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);
    scan.matrix.save(out(MATRIX_FILE))?;
    scan.phantom.save_text(out(PHANTOM_FILE))?;
    scan.phantom.save_pgm(out(PHANTOM_PGM))?;
    save_vector(&scan.clean, out(CLEAN_FILE))?;
    save_vector(&scan.noisy, out(NOISY_FILE))?;
    println!(
        "wrote {}x{} matrix ({} nonzeros), {}x{} phantom and measurements to {}",
        scan.matrix.nrows(),
        scan.matrix.ncols(),
        scan.matrix.nnz(),
        a.size,
        a.size,
        a.out_dir.display()
    );
    Ok(())
}

fn parse_solvers(names: &[String]) -> bsgd_tv::Result<Vec<SolverKind>> {
    let mut kinds = Vec::new();
    for name in names {
        if name.eq_ignore_ascii_case("all") {
            kinds.extend(SolverKind::ALL);
        } else {
            kinds.push(name.parse()?);
        }
    }
    kinds.dedup();
    Ok(kinds)
}

fn cmd_run(a: RunArgs) -> bsgd_tv::Result<()> {
    let flags = RunSettings {
        solvers: a.solver.as_deref().map(parse_solvers).transpose()?,
        blocks: a.blocks.clone(),
        mu: a.mu,
        lambda: a.lambda,
        alpha: a.alpha,
        gamma: a.gamma,
        epochs: a.epochs,
        seed: a.seed,
        enforce_decrease: a.enforce_decrease.then_some(true),
        warm_start_prox: a.cold_prox.then_some(false),
        rho: a.rho,
        cg_iters: a.cg_iters,
        workers: a.workers,
        sample_every: a.sample_every,
        layout: a.layout.map(Into::into),
        prox: bsgd_tv::config::ProxOverrides {
            max_inner_iters: a.prox_iters,
            tol: a.prox_tol,
        },
    };
    let file = match &a.config {
        Some(path) => RunSettings::load(path).map_err(with_path(path))?,
        None => RunSettings::default(),
    };
    let settings = flags.overlay(file);
    let cfg = settings.solver_config();
    let (m, n) = settings.block_counts()?;
    let solvers = settings.solvers.clone().unwrap_or_else(|| vec![SolverKind::Bsgd]);
    let layout_kind = settings.layout.unwrap_or(LayoutKind::Quadtree);

    let matrix_path = a.data_dir.join(MATRIX_FILE);
    let phantom_path = a.data_dir.join(PHANTOM_FILE);
    let y_path = a.measurements.clone().unwrap_or_else(|| a.data_dir.join(NOISY_FILE));
    let matrix = SparseMatrix::load(&matrix_path).map_err(with_path(&matrix_path))?;
    let phantom = ImageGrid::load_text(&phantom_path).map_err(with_path(&phantom_path))?;
    let y = load_vector(&y_path).map_err(with_path(&y_path))?;
    let layout = PixelLayout::new(phantom.height(), phantom.width(), layout_kind);
    let x_true = layout.from_grid(&phantom)?;
    let op = BlockOperator::whole(matrix)?.with_blocks(m, n)?;
    let problem = Problem::new(op, y, x_true, layout)?;

    std::fs::create_dir_all(&a.out_dir)?;
    let sample_every = settings.sample_every.unwrap_or(1);
    let mut traces = Vec::new();
    let mut failure = None;
    for kind in solvers {
        let trace = match run_solver(kind, &problem, &cfg, sample_every) {
            Ok(t) => t,
            Err(Error::Divergence { epoch, trace }) => {
                failure = Some(Error::Divergence {
                    epoch,
                    trace: trace.clone(),
                });
                *trace
            }
            Err(e) => return Err(e),
        };
        let path = a.out_dir.join(format!("trace_{kind}.csv"));
        trace.save_csv(&path)?;
        report(&trace, &path);
        traces.push(trace);
        if failure.is_some() {
            break;
        }
    }
    if a.plot {
        let path = a.out_dir.join(PLOT_FILE);
        plot::save_svg(&traces, &path)?;
        println!("plot: {}", path.display());
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn report(trace: &ConvergenceTrace, path: &Path) {
    if let Some(s) = trace.last() {
        println!(
            "{}: epoch {} relative_error {:.6} objective {:.6e} matvec_units {:.1} -> {}",
            trace.solver,
            s.epoch,
            s.relative_error,
            s.objective,
            s.matvec_units,
            path.display()
        );
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> bsgd_tv::Result<()> {
    let matrix = SparseMatrix::load(&a.matrix).map_err(with_path(&a.matrix))?;
    let op = BlockOperator::whole(matrix)?;
    let dense = op.ncols() <= DENSE_COLUMN_LIMIT;
    let u_max = if dense {
        normal_matrix_eigenvalues(&op)?.last().copied().unwrap_or(0.0)
    } else {
        largest_eigenvalue(&op, a.power_tol, a.power_iters)?.u_max
    };
    let bound = step_bound(u_max)?;
    let top = mode_radius(u_max, a.mu);
    println!("u_max = {u_max}");
    println!("mu_sup = {}", bound.mu_sup);
    println!("mu = {}", a.mu);
    println!("top_mode_radius = {top}");
    if dense {
        println!("spectral_radius = {}", closed_form_spectral_radius(&op, a.mu)?);
    }
    let admit = bound.admits(a.mu) && top < 1.0;
    println!("verdict = {}", if admit { "ADMIT" } else { "REJECT" });
    Ok(())
}
