//! Command-line front door: parse model files and flags, dispatch to
//! check / limit / simulate / montecarlo, emit CSV/JSON.
//!
//! Exit codes: 0 success, 1 invalid input, 2 model rejection (not causal
//! or not strongly controllable where required), 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use arxtrack_core::*;

const EXIT_INVALID: u8 = 1;
const EXIT_REJECTED: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "arxtrack",
    version,
    about = "Adaptive tracking laboratory for ARX(p,q) models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check causality and strong controllability of a model
    Check {
        /// Path to the model JSON file
        model: PathBuf,
        /// Tolerance for the spectral-radius causality margin
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Compute the limiting excitation matrix Lambda and its blocks
    Limit {
        model: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Directory for limit.json
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run one closed-loop adaptive tracking simulation
    Simulate {
        model: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Directory for run.csv
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a Monte-Carlo experiment over independent noise streams
    Montecarlo {
        model: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Number of realizations
        #[arg(short, long, default_value_t = 500)]
        m: usize,
        /// Directory for summary.json, z_samples.csv and hist.csv
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Estimation algorithm
    #[arg(long, value_enum, default_value_t = Algo::Ls)]
    algo: Algo,
    /// WLS weight exponent (ignored for ls)
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Horizon (steps per realization)
    #[arg(short, long, default_value_t = 1000)]
    n: usize,
    /// Base RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference trajectory
    #[arg(long, value_enum, default_value_t = Traj::Zero)]
    traj: Traj,
    /// Decay rate for --traj decay, in (0, 1/2)
    #[arg(long, default_value_t = 0.25)]
    rate: f64,
    /// Amplitude for --traj periodic
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Period for --traj periodic
    #[arg(long, default_value_t = 16)]
    period: usize,
    /// Noise distribution
    #[arg(long, value_enum, default_value_t = Noise::Gaussian)]
    noise: Noise,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Ls,
    Wls,
}

#[derive(Clone, Copy, ValueEnum)]
enum Traj {
    Zero,
    Decay,
    Periodic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Gaussian,
    Uniform,
}

/// Error carrying the process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    // map clap usage errors onto the invalid-input exit code; --help and
    // --version still print normally
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("error: {}", e.kind());
            let _ = e.print();
            return ExitCode::from(EXIT_INVALID);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Check { model, tol } => cmd_check(&model, tol),
        Command::Limit {
            model,
            tol,
            out_dir,
        } => cmd_limit(&model, tol, &out_dir),
        Command::Simulate {
            model,
            run,
            out_dir,
        } => cmd_simulate(&model, &run, &out_dir),
        Command::Montecarlo {
            model,
            run,
            m,
            out_dir,
        } => cmd_montecarlo(&model, &run, m, &out_dir),
    }
}

fn load_model(path: &Path) -> CliResult<ArxModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_INVALID, format!("cannot read {}: {e}", path.display())))?;
    ArxModel::from_json_str(&text)
        .map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path.display())))
}

/// Runs both admissibility checks; `reject` controls whether a negative
/// verdict is an error (exit 2) or just part of the report.
fn controllability(model: &ArxModel, tol: f64, reject: bool) -> CliResult<ControllabilityReport> {
    let report = check_strong_controllability(model, tol)
        .map_err(|e| CliError::new(EXIT_INVALID, e.to_string()))?;
    if reject && !report.causal {
        return Err(CliError::new(
            EXIT_REJECTED,
            format!("model is not causal: spectral radius {} >= 1", report.rho),
        ));
    }
    if reject && !report.strongly_controllable {
        return Err(CliError::new(
            EXIT_REJECTED,
            format!(
                "model is not strongly controllable: det(Pi) = {}",
                report.det_pi
            ),
        ));
    }
    Ok(report)
}

fn cmd_check(path: &Path, tol: f64) -> CliResult<()> {
    let model = load_model(path)?;
    let report = controllability(&model, tol, true)?;
    println!(
        "{{\"causal\":{},\"rho\":{},\"det_pi\":{},\"strongly_controllable\":{}}}",
        report.causal,
        json_f64(report.rho),
        json_f64(report.det_pi),
        report.strongly_controllable
    );
    Ok(())
}

fn cmd_limit(path: &Path, tol: f64, out_dir: &Path) -> CliResult<()> {
    let model = load_model(path)?;
    controllability(&model, tol, true)?;
    let limits = build_lambda(&model, tol).map_err(|e| match e {
        LimitError::DivergentSeries { .. } | LimitError::TruncationFailed { .. } => {
            CliError::new(EXIT_NUMERICAL, e.to_string())
        }
        other => CliError::new(EXIT_NUMERICAL, other.to_string()),
    })?;
    let json = serde_json::to_string_pretty(&limits)
        .map_err(|e| CliError::new(EXIT_NUMERICAL, e.to_string()))?;
    write_file(out_dir, "limit.json", &json)?;
    println!("{json}");
    Ok(())
}

fn run_config(args: &RunArgs, stream_id: u64) -> CliResult<RunConfig> {
    let policy = match args.algo {
        Algo::Ls => WeightPolicy::Ls,
        Algo::Wls => {
            if args.gamma <= 0.0 {
                return Err(CliError::new(EXIT_INVALID, "wls requires --gamma > 0"));
            }
            WeightPolicy::Wls { gamma: args.gamma }
        }
    };
    let traj = match args.traj {
        Traj::Zero => RefTrajectory::Zero,
        Traj::Decay => {
            if args.rate <= 0.0 || args.rate >= 0.5 {
                return Err(CliError::new(EXIT_INVALID, "--rate must lie in (0, 0.5)"));
            }
            RefTrajectory::DecayingPower { rate: args.rate }
        }
        Traj::Periodic => RefTrajectory::BoundedPeriodic {
            amplitude: args.amplitude,
            period: args.period,
        },
    };
    if args.n < 1 {
        return Err(CliError::new(EXIT_INVALID, "--n must be at least 1"));
    }
    let noise_kind = match args.noise {
        Noise::Gaussian => NoiseKind::GaussianWhite,
        Noise::Uniform => NoiseKind::ScaledUniformWhite,
    };
    Ok(RunConfig {
        policy,
        traj,
        noise_kind,
        seed: args.seed,
        stream_id,
        n_steps: args.n,
        theta0: None,
        checkpoints: vec![],
    })
}

fn cmd_simulate(path: &Path, args: &RunArgs, out_dir: &Path) -> CliResult<()> {
    let model = load_model(path)?;
    controllability(&model, 1e-10, true)?;
    let config = run_config(args, 0)?;
    let record = run_closed_loop(&model, &config)
        .map_err(|e| CliError::new(EXIT_NUMERICAL, e.to_string()))?;
    write_file(out_dir, "run.csv", &run_csv(&record))?;
    Ok(())
}

/// One row per loop step n = 0..N-1: the state X_n seen at the step, the
/// control U_n applied, the reference x_n, the noise eps_{n+1} drawn during
/// the step, the squared estimate error after the step's update, and f_n.
fn run_csv(record: &RunRecord) -> String {
    let d = record.d;
    let mut out = String::from("n");
    for tag in ["X", "U", "xref", "eps"] {
        for i in 1..=d {
            out.push_str(&format!(",{tag}_{i}"));
        }
    }
    out.push_str(",theta_err_sq,f_n\n");
    for n in 0..record.n_steps {
        out.push_str(&n.to_string());
        for series in [&record.x[n], &record.u[n], &record.x_ref[n], &record.eps[n]] {
            for v in series.iter() {
                out.push(',');
                out.push_str(&csv_f64(*v));
            }
        }
        out.push(',');
        out.push_str(&csv_f64(record.theta_err_sq[n + 1]));
        out.push(',');
        out.push_str(&csv_f64(record.f_n[n]));
        out.push('\n');
    }
    out
}

const HIST_BINS: usize = 40;
const HIST_RANGE: f64 = 4.0;

fn cmd_montecarlo(path: &Path, args: &RunArgs, m: usize, out_dir: &Path) -> CliResult<()> {
    let model = load_model(path)?;
    controllability(&model, 1e-10, true)?;
    if m < 2 {
        return Err(CliError::new(EXIT_INVALID, "--m must be at least 2"));
    }
    if args.n < 100 {
        return Err(CliError::new(
            EXIT_INVALID,
            "--n must be at least 100 for montecarlo",
        ));
    }
    let config = run_config(args, 0)?;
    let checkpoints = default_checkpoints(args.n);
    let summary = run_montecarlo(
        &model,
        config.policy,
        config.traj,
        config.noise_kind,
        m,
        args.n,
        args.seed,
        &checkpoints,
    )
    .map_err(|e| CliError::new(EXIT_NUMERICAL, e.to_string()))?;

    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::new(EXIT_NUMERICAL, e.to_string()))?;
    write_file(out_dir, "summary.json", &json)?;

    let coords = summary.z_samples[0].len();
    let mut z_csv = (1..=coords)
        .map(|c| format!("z_{c}"))
        .collect::<Vec<_>>()
        .join(",");
    z_csv.push('\n');
    for row in &summary.z_samples {
        z_csv.push_str(
            &row.iter()
                .map(|v| csv_f64(*v))
                .collect::<Vec<_>>()
                .join(","),
        );
        z_csv.push('\n');
    }
    write_file(out_dir, "z_samples.csv", &z_csv)?;

    let mut hist = String::from("bin_lo,bin_hi");
    for c in 1..=coords {
        hist.push_str(&format!(",count_{c}"));
    }
    hist.push('\n');
    let counts: Vec<Vec<usize>> = (0..coords)
        .map(|c| {
            let column: Vec<f64> = summary.z_samples.iter().map(|z| z[c]).collect();
            histogram_counts(&column, HIST_BINS, -HIST_RANGE, HIST_RANGE)
        })
        .collect();
    let width = 2.0 * HIST_RANGE / HIST_BINS as f64;
    for b in 0..HIST_BINS {
        let lo = -HIST_RANGE + b as f64 * width;
        hist.push_str(&format!("{},{}", csv_f64(lo), csv_f64(lo + width)));
        for col in &counts {
            hist.push_str(&format!(",{}", col[b]));
        }
        hist.push('\n');
    }
    write_file(out_dir, "hist.csv", &hist)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::new(
            EXIT_INVALID,
            format!("cannot create {}: {e}", dir.display()),
        )
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| {
        CliError::new(
            EXIT_INVALID,
            format!("cannot write {}: {e}", path.display()),
        )
    })
}

/// Shortest decimal representation that round-trips the 64-bit float.
fn json_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

fn csv_f64(v: f64) -> String {
    format!("{v}")
}
