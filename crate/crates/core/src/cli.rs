//! Command-line front end: `impute`, `simulate`, `sweep` and `estimate-priors`.
//!
//! Exit codes: 0 on success, 1 for bad input (arguments, files, shapes),
//! 2 when the solver fails numerically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{ImputeError, Result};
use crate::gaussian::mu_max;
use crate::io::{self, RunManifest};
use crate::priors::{estimate_kernels, PriorSet};
use crate::solver::{default_rank, solve, Loss, SolveConfig};
use crate::synth::{generate, log_grid, random_mask, sweep_mu, SynthSpec};
use crate::tensor::{Mask3, Mode, Tensor3};

#[derive(Parser, Debug)]
#[command(name = "tensor-impute", version, about = "Rank-regularized PARAFAC imputation of three-way tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fill in the unobserved entries of a tensor.
    Impute(ImputeArgs),
    /// Generate a synthetic tensor with train/test masks.
    Simulate(SimulateArgs),
    /// Evaluate held-out recovery error and rank across a grid of mu values.
    Sweep(SweepArgs),
    /// Estimate prior covariances from fully observed training tensors.
    EstimatePriors(EstimateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Gaussian,
    Poisson,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Gaussian => Loss::Gaussian,
            LossArg::Poisson => Loss::Poisson,
        }
    }
}

/// Data and solver options shared by `impute` and `sweep`.
#[derive(Args, Debug)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub model: LossArg,
    /// Data tensor (text or binary container).
    #[arg(long)]
    pub tensor: PathBuf,
    /// Observation mask; every entry is treated as observed when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Rank budget; defaults to twice the smallest dimension.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Directory holding `ra.csv`, `rb.csv`, `rc.csv`; identities when omitted.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hold the tube factor at ones (matrix completion on each slice stack).
    #[arg(long)]
    pub freeze_c: bool,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Absolute regularization weight.
    #[arg(long, conflicts_with = "mu_rel", required_unless_present = "mu_rel")]
    pub mu: Option<f64>,
    /// Regularization weight as a fraction of mu_max.
    #[arg(long)]
    pub mu_rel: Option<f64>,
    /// Output tensor; the cost trace goes to `<out>.trace.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the estimate as a binary container.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: LossArg,
    #[arg(long, num_args = 3, value_names = ["M", "N", "P"], required = true)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, conflicts_with = "mean_level", allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub mean_level: Option<f64>,
    /// Fraction of entries moved to the test mask.
    #[arg(long, default_value_t = 0.25)]
    pub missing: f64,
    /// Additionally hold out a whole slice, e.g. `--reserve-slice column 1`.
    #[arg(long, num_args = 2, value_names = ["MODE", "INDEX"])]
    pub reserve_slice: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes `<prefix>z.txt`, `x.txt`, `train.txt`, `test.txt`, `manifest.json`.
    #[arg(long)]
    pub out_prefix: String,
    #[arg(long)]
    pub binary: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Held-out mask the error is measured on.
    #[arg(long)]
    pub test: PathBuf,
    /// `log:COUNT:LO:HI` or a comma-separated list.
    #[arg(long)]
    pub mu_grid: String,
    /// Interpret grid values as fractions of mu_max.
    #[arg(long)]
    pub mu_relative: bool,
    /// Number of solver seeds per grid point, counted up from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Output CSV with columns mu, mean_error_db, mean_rank, n_seeds.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub samples: Vec<PathBuf>,
    #[arg(long)]
    pub rank_hint: usize,
    /// Directory receiving `ra.csv`, `rb.csv`, `rc.csv` and `manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `log:COUNT:LO:HI` or `v1,v2,...`.
pub fn parse_mu_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || ImputeError::Input(format!("invalid mu grid '{spec}'"));
    let grid = if let Some(rest) = spec.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let count: usize = parts[0].parse().map_err(|_| bad())?;
        let lo: f64 = parts[1].parse().map_err(|_| bad())?;
        let hi: f64 = parts[2].parse().map_err(|_| bad())?;
        if count == 0 || !(lo > 0.0) || !(hi >= lo) {
            return Err(bad());
        }
        log_grid(lo, hi, count)
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() || grid.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_priors(dir: Option<&Path>, dims: (usize, usize, usize)) -> Result<(PriorSet, Vec<PathBuf>)> {
    match dir {
        None => Ok((PriorSet::identity(dims.0, dims.1, dims.2), Vec::new())),
        Some(dir) => {
            let paths: Vec<PathBuf> = ["ra.csv", "rb.csv", "rc.csv"].iter().map(|f| dir.join(f)).collect();
            let priors = PriorSet::new(
                io::read_matrix_csv(&paths[0])?,
                io::read_matrix_csv(&paths[1])?,
                io::read_matrix_csv(&paths[2])?,
            )?;
            if priors.dims() != dims {
                return Err(ImputeError::Shape(format!(
                    "prior dims {:?} differ from tensor dims {dims:?}",
                    priors.dims()
                )));
            }
            Ok((priors, paths))
        }
    }
}

struct LoadedProblem {
    z: Tensor3,
    mask: Mask3,
    priors: PriorSet,
    inputs: Vec<PathBuf>,
}

fn load_problem(args: &SolverArgs) -> Result<LoadedProblem> {
    let z = io::read_tensor(&args.tensor)?;
    let mut inputs = vec![args.tensor.clone()];
    let mask = match &args.mask {
        Some(path) => {
            inputs.push(path.clone());
            io::read_mask(path)?
        }
        None => Mask3::full(z.dims()),
    };
    if mask.dims() != z.dims() {
        return Err(ImputeError::Shape(format!(
            "mask dims {:?} differ from tensor dims {:?}",
            mask.dims(),
            z.dims()
        )));
    }
    let (priors, prior_paths) = load_priors(args.priors.as_deref(), z.dims())?;
    inputs.extend(prior_paths);
    Ok(LoadedProblem { z, mask, priors, inputs })
}

fn base_config(args: &SolverArgs, dims: (usize, usize, usize), mu: f64) -> SolveConfig {
    SolveConfig::new(mu, args.rank.unwrap_or_else(|| default_rank(dims)))
        .with_tol(args.tol)
        .with_max_iters(args.max_iters)
        .with_seed(args.seed)
        .with_loss(args.model.into())
        .with_frozen_c(args.freeze_c)
}

fn manifest_config(cfg: &SolveConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn cli_args() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn run_impute(args: &ImputeArgs) -> Result<()> {
    let start = Instant::now();
    let problem = load_problem(&args.solver)?;
    let mu = match (args.mu, args.mu_rel) {
        (Some(mu), _) => mu,
        (None, Some(rel)) => rel * mu_max(&problem.z, &problem.mask)?,
        (None, None) => unreachable!("clap requires one of --mu / --mu-rel"),
    };
    let cfg = base_config(&args.solver, problem.z.dims(), mu);
    let report = solve(&problem.z, &problem.mask, &problem.priors, &cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let trace_path = with_suffix(&args.out, ".trace.csv");
    let manifest_path = args
        .solver
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    io::write_tensor(&args.out, &report.estimate, args.binary)?;
    io::write_cost_trace(&trace_path, &report.cost_trace)?;
    let mut config = manifest_config(&cfg);
    config["converged"] = json!(report.converged);
    config["effective_rank"] = json!(report.final_model.effective_rank(crate::model::DEFAULT_RANK_TOL));
    RunManifest {
        command: "impute".into(),
        args: cli_args(),
        config,
        seed: Some(cfg.seed),
        inputs: RunManifest::digest_inputs(problem.inputs.iter().map(PathBuf::as_path))?,
        outputs: vec![args.out.clone(), trace_path],
        wall_clock_secs: start.elapsed().as_secs_f64(),
        iterations: Some(report.iterations),
        final_cost: Some(report.final_cost()),
        warnings: report.warnings.clone(),
    }
    .write(&manifest_path)
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let dims = (args.dims[0], args.dims[1], args.dims[2]);
    let spec = match args.family {
        LossArg::Gaussian => {
            if args.mean_level.is_some() {
                return Err(ImputeError::Input("--mean-level applies to the poisson family".into()));
            }
            SynthSpec::gaussian(dims, args.rank, args.snr_db.unwrap_or(20.0), args.seed)
        }
        LossArg::Poisson => {
            if args.snr_db.is_some() {
                return Err(ImputeError::Input("--snr-db applies to the gaussian family".into()));
            }
            SynthSpec::poisson(dims, args.rank, args.mean_level.unwrap_or(100.0), args.seed)
        }
    };
    let reserve = match &args.reserve_slice {
        Some(v) => {
            let index = v[1]
                .parse::<usize>()
                .map_err(|_| ImputeError::Input(format!("bad slice index '{}'", v[1])))?;
            Some((Mode::parse(&v[0])?, index))
        }
        None => None,
    };
    let data = generate(&spec)?;
    let (train, test) = random_mask(dims, args.missing, args.seed.wrapping_add(1), reserve)?;
    let path = |name: &str| PathBuf::from(format!("{}{name}", args.out_prefix));
    let outputs = vec![path("z.txt"), path("x.txt"), path("train.txt"), path("test.txt")];
    io::write_tensor(&outputs[0], &data.z, args.binary)?;
    io::write_tensor(&outputs[1], &data.x_true, args.binary)?;
    io::write_mask(&outputs[2], &train, args.binary)?;
    io::write_mask(&outputs[3], &test, args.binary)?;
    RunManifest {
        command: "simulate".into(),
        args: cli_args(),
        config: json!({
            "family": format!("{:?}", args.family).to_lowercase(),
            "dims": [dims.0, dims.1, dims.2],
            "rank": args.rank,
            "spec": serde_json::to_value(spec.family).expect("family serializes"),
            "missing": args.missing,
            "reserve_slice": reserve.map(|(m, i)| format!("{m} {i}")),
        }),
        seed: Some(args.seed),
        inputs: Vec::new(),
        outputs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        iterations: None,
        final_cost: None,
        warnings: Vec::new(),
    }
    .write(&path("manifest.json"))
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let start = Instant::now();
    let problem = load_problem(&args.solver)?;
    let test = io::read_mask(&args.test)?;
    let mut grid = parse_mu_grid(&args.mu_grid)?;
    let scale = if args.mu_relative { mu_max(&problem.z, &problem.mask)? } else { 1.0 };
    grid.iter_mut().for_each(|g| *g *= scale);
    if args.seeds == 0 {
        return Err(ImputeError::Input("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..args.seeds).map(|k| args.solver.seed.wrapping_add(k)).collect();
    let cfg = base_config(&args.solver, problem.z.dims(), grid[0]);
    let points = sweep_mu(&problem.z, &problem.mask, &test, &problem.priors, &cfg, &grid, &seeds)?;
    io::write_sweep_csv(&args.out, &points)?;
    let mut inputs = problem.inputs;
    inputs.push(args.test.clone());
    let mut config = manifest_config(&cfg);
    config["mu_grid"] = json!(grid);
    config["mu_scale"] = json!(scale);
    config["seeds"] = json!(seeds);
    let manifest_path = args
        .solver
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    RunManifest {
        command: "sweep".into(),
        args: cli_args(),
        config,
        seed: Some(args.solver.seed),
        inputs: RunManifest::digest_inputs(inputs.iter().map(PathBuf::as_path))?,
        outputs: vec![args.out.clone()],
        wall_clock_secs: start.elapsed().as_secs_f64(),
        iterations: Some(points.iter().flat_map(|p| p.runs.iter()).map(|r| r.iterations).sum()),
        final_cost: None,
        warnings: Vec::new(),
    }
    .write(&manifest_path)
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let start = Instant::now();
    let samples = args
        .samples
        .iter()
        .map(|p| io::read_tensor(p))
        .collect::<Result<Vec<Tensor3>>>()?;
    let est = estimate_kernels(&samples, args.rank_hint)?;
    let outputs: Vec<PathBuf> = ["ra.csv", "rb.csv", "rc.csv"].iter().map(|f| args.out.join(f)).collect();
    io::write_matrix_csv(&outputs[0], &est.priors.a)?;
    io::write_matrix_csv(&outputs[1], &est.priors.b)?;
    io::write_matrix_csv(&outputs[2], &est.priors.c)?;
    RunManifest {
        command: "estimate-priors".into(),
        args: cli_args(),
        config: json!({
            "rank_hint": args.rank_hint,
            "n_samples": samples.len(),
            "theta": est.theta,
            "mean_energy": est.mean_energy,
        }),
        seed: None,
        inputs: RunManifest::digest_inputs(args.samples.iter().map(PathBuf::as_path))?,
        outputs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        iterations: None,
        final_cost: None,
        warnings: Vec::new(),
    }
    .write(&args.out.join("manifest.json"))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Impute(a) => run_impute(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::EstimatePriors(a) => run_estimate(a),
    }
}

/// Parses the process arguments, runs the command and maps the outcome to
/// an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
