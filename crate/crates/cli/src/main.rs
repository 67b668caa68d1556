//! Command-line front end: run training scenarios, generate datasets,
//! solve and verify max-margin certificates, and render trajectory plots.
//!
//! Exit codes: 0 success, 1 runtime or assumption failure, 2 usage or
//! configuration error.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use linalign::dynamics::Mode;
use linalign::experiments::{self, io, ExperimentError, GeneratorSpec, Scenario};
use linalign::geometry::{spread_alpha, svm_solve, verify_certificate, GeometryError};
use linalign::model::LossKind;

#[derive(Parser)]
#[command(
    name = "linalign",
    about = "Deep linear networks on separable data: training runs, max-margin certificates, alignment diagnostics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and stream its trajectory to CSV.
    Run {
        scenario: PathBuf,
        /// Override the initializer seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the network depth.
        #[arg(long)]
        depth: Option<usize>,
        /// Override the loss (exp | log).
        #[arg(long)]
        loss: Option<String>,
        /// Override the training mode (flow | gd).
        #[arg(long)]
        mode: Option<String>,
        /// Override the step cap.
        #[arg(long = "stop.max-steps")]
        stop_max_steps: Option<usize>,
        /// Override the risk floor.
        #[arg(long = "stop.risk-floor")]
        stop_risk_floor: Option<f64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset CSV (blobs | circles).
    GenData {
        #[arg(value_parser = ["blobs", "circles"])]
        kind: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Dimension (blobs only).
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Guaranteed margin along the hidden direction (blobs only).
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        /// Gap between the circles (circles only).
        #[arg(long, default_value_t = 0.5)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the hard-margin SVM for a dataset; print and save the
    /// certificate.
    Svm {
        dataset: PathBuf,
        /// Certificate output path (default: dataset path + .cert).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Validate a dataset, and verify a certificate file against it when
    /// given.
    Check {
        dataset: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Render a trajectory CSV as an SVG (risk on a log axis plus
    /// alignment ratios).
    Plot {
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// The run itself failed: exit 1.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn classify(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Config { .. }
        | ExperimentError::Generator(_)
        | ExperimentError::Model(_)
        | ExperimentError::File(_) => CliError::Usage(e.to_string()),
        ExperimentError::Geometry(_)
        | ExperimentError::Dynamics(_)
        | ExperimentError::Diagnostics(_)
        | ExperimentError::InitCheckFailed { .. } => CliError::Runtime(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            scenario,
            seed,
            depth,
            loss,
            mode,
            stop_max_steps,
            stop_risk_floor,
            out,
        } => cmd_run(
            &scenario,
            seed,
            depth,
            loss,
            mode,
            stop_max_steps,
            stop_risk_floor,
            out,
        ),
        Command::GenData {
            kind,
            n,
            d,
            margin,
            separation,
            seed,
            out,
        } => cmd_gen_data(&kind, n, d, margin, separation, seed, &out),
        Command::Svm { dataset, out, tol } => cmd_svm(&dataset, out, tol),
        Command::Check { dataset, cert } => cmd_check(&dataset, cert),
        Command::Plot { trajectory, out } => cmd_plot(&trajectory, &out),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario_path: &Path,
    seed: Option<u64>,
    depth: Option<usize>,
    loss: Option<String>,
    mode: Option<String>,
    stop_max_steps: Option<usize>,
    stop_risk_floor: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if !scenario_path.exists() {
        return Err(CliError::Usage(format!(
            "scenario file not found: {}",
            scenario_path.display()
        )));
    }
    let mut scenario = Scenario::parse_file(scenario_path).map_err(classify)?;
    if let Some(s) = seed {
        scenario.init_seed = s;
    }
    if let Some(d) = depth {
        scenario.depth = d;
    }
    if let Some(l) = &loss {
        scenario.loss = match l.as_str() {
            "exp" | "exponential" => LossKind::Exponential,
            "log" | "logistic" => LossKind::Logistic,
            other => return Err(CliError::Usage(format!("unknown loss {other:?}"))),
        };
    }
    if let Some(m) = &mode {
        scenario.mode = match m.as_str() {
            "flow" => Mode::Flow,
            "gd" => Mode::Descent,
            other => return Err(CliError::Usage(format!("unknown mode {other:?}"))),
        };
    }
    if let Some(ms) = stop_max_steps {
        scenario.max_steps = ms;
    }
    if let Some(rf) = stop_risk_floor {
        scenario.risk_floor = rf;
    }
    if let Some(o) = out {
        scenario.out_dir = o;
    }

    let outcome = experiments::run_scenario(&scenario).map_err(classify)?;

    // Invariant gate: a finished run must respect the process guarantees.
    if let Some(stats) = &outcome.gd_stats {
        if matches!(scenario.step_rule, experiments::StepRule::Adaptive) {
            if stats.max_monotonicity_slack > 1e-12 {
                return Err(CliError::Runtime(format!(
                    "risk increased along the run (max slack {})",
                    stats.max_monotonicity_slack
                )));
            }
            let budget_cap = 2.0 * stats.initial_risk + 1e-9;
            if stats.budget_eta > budget_cap {
                return Err(CliError::Runtime(format!(
                    "step budget {} exceeded the cap {budget_cap}",
                    stats.budget_eta
                )));
            }
            if stats.max_pair_drift > budget_cap {
                return Err(CliError::Runtime(format!(
                    "layer norm drift {} exceeded the cap {budget_cap}",
                    stats.max_pair_drift
                )));
            }
        }
    }
    if let Some(stats) = &outcome.flow_stats {
        let residual_cap = 10.0 * scenario.tol * scenario.t_end.max(1.0);
        if stats.max_conservation_residual > residual_cap {
            return Err(CliError::Runtime(format!(
                "conservation residual {} exceeded the integrator budget {residual_cap}",
                stats.max_conservation_residual
            )));
        }
    }

    let summary = std::fs::read_to_string(&outcome.summary_path)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    print!("{summary}");
    println!("trajectory = {}", outcome.trajectory_path.display());
    Ok(())
}

fn cmd_gen_data(
    kind: &str,
    n: usize,
    d: usize,
    margin: f64,
    separation: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let spec = match kind {
        "blobs" => GeneratorSpec::Blobs { n, d, margin, seed },
        "circles" => GeneratorSpec::Circles {
            n,
            separation,
            seed,
        },
        other => return Err(CliError::Usage(format!("unknown generator {other:?}"))),
    };
    let data = experiments::build_dataset(&spec).map_err(classify)?;
    io::save_dataset(out, &data).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {} points (d = {}) to {}",
        data.len(),
        data.dim(),
        out.display()
    );
    Ok(())
}

fn cmd_svm(dataset: &Path, out: Option<PathBuf>, tol: f64) -> Result<(), CliError> {
    let data = io::load_dataset(dataset).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cert = match svm_solve(&data, tol) {
        Ok(c) => c,
        Err(e @ GeometryError::NonSeparable { .. }) => {
            return Err(CliError::Runtime(e.to_string()));
        }
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    verify_certificate(&data, &cert, 1e-6).map_err(|e| CliError::Runtime(e.to_string()))?;
    cert.spread = spread_alpha(&data, &cert).ok();

    println!("gamma = {}", cert.gamma);
    let u: Vec<String> = cert.u_bar.iter().map(|x| format!("{x}")).collect();
    println!("u_bar = {}", u.join(","));
    let s: Vec<String> = cert.support.iter().map(|i| format!("{i}")).collect();
    println!("support = {}", s.join(","));
    let a: Vec<String> = cert.duals.iter().map(|x| format!("{x}")).collect();
    println!("duals = {}", a.join(","));
    match cert.spread {
        Some(alpha) => println!("spread = {alpha}"),
        None => println!("spread = unavailable"),
    }

    let cert_path = out.unwrap_or_else(|| {
        let mut p = dataset.as_os_str().to_owned();
        p.push(".cert");
        PathBuf::from(p)
    });
    io::save_certificate(&cert_path, &cert).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("certificate = {}", cert_path.display());
    Ok(())
}

fn cmd_check(dataset: &Path, cert: Option<PathBuf>) -> Result<(), CliError> {
    let data = io::load_dataset(dataset).map_err(|e| CliError::Usage(e.to_string()))?;
    match cert {
        Some(cert_path) => {
            let cert =
                io::load_certificate(&cert_path).map_err(|e| CliError::Usage(e.to_string()))?;
            verify_certificate(&data, &cert, 1e-6)
                .map_err(|e| CliError::Runtime(format!("certificate check failed: {e}")))?;
            println!(
                "ok: certificate verifies (gamma = {}, {} support vectors)",
                cert.gamma,
                cert.support.len()
            );
        }
        None => {
            let cert = svm_solve(&data, 1e-8).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "ok: {} points, d = {}, separable with gamma = {}",
                data.len(),
                data.dim(),
                cert.gamma
            );
        }
    }
    Ok(())
}

fn cmd_plot(trajectory: &Path, out: &Path) -> Result<(), CliError> {
    let table = io::load_trajectory(trajectory).map_err(|e| CliError::Runtime(e.to_string()))?;
    if table.rows.is_empty() {
        return Err(CliError::Runtime(format!(
            "trajectory {} has no data rows",
            trajectory.display()
        )));
    }
    let svg = plot::render(&table);
    std::fs::write(out, svg).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("wrote {}", out.display());
    Ok(())
}
