//! Command-line surface: solve, eval, gradcheck, verify, cubic-coeffs.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 convergence failure
//! (or gradient check above tolerance), 3 verification-threshold failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use smsolve::controls::CubicCoeffs;
use smsolve::descent::DescentConfig;
use smsolve::error::Result;
use smsolve::functionals::evaluate_for;
use smsolve::gradients::{bundle_disagreement, gradient_for, numeric_gradient, sample_smooth_point};
use smsolve::grid::{build_state, DerivativeGrid, SampledTrajectory, TimeGrid};
use smsolve::io;
use smsolve::ode::IntegrationMethod;
use smsolve::problem::ProblemSpec;
use smsolve::verify::verify_solution;

#[derive(Parser)]
#[command(name = "smsolve", version, about = "Sliding-mode trajectory solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk45,
    Rk4,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the residual functional, then verify the closed loop
    Solve {
        problem: PathBuf,
        /// Output directory for trajectory.csv, report.json, verify.json, trace.csv
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        tol_i: Option<f64>,
        #[arg(long)]
        tol_grad: Option<f64>,
        /// Override the problem file's grid node count
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Print the functional breakdown at the file's initial point
    Eval {
        problem: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Compare analytic gradients against central differences
    Gradcheck {
        problem: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        /// Extra random smooth points beyond the file's initial point
        #[arg(long, default_value_t = 0)]
        points: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol_z: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol_p: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Integrate the closed loop for given parameters and scan residuals
    Verify {
        problem: PathBuf,
        /// JSON file holding the surface parameters (a bare array or any
        /// object with a `params` array; report.json works)
        params: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Rk45)]
        method: MethodArg,
        /// Fixed step for --method rk4 (default 1e-4 * T)
        #[arg(long = "h")]
        step: Option<f64>,
        /// Also write verify.json and trajectory.csv here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the cubic blend coefficients of the square-root law
    CubicCoeffs {
        #[arg(long)]
        k: f64,
        #[arg(long)]
        delta: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve { problem, out, max_iter, tol_i, tol_grad, grid } => {
            run_solve(&problem, &out, max_iter, tol_i, tol_grad, grid)
        }
        Command::Eval { problem, grid } => run_eval(&problem, grid),
        Command::Gradcheck { problem, grid, points, step, tol_z, tol_p, seed } => {
            run_gradcheck(&problem, grid, points, step, tol_z, tol_p, seed)
        }
        Command::Verify { problem, params, method, step, out } => {
            run_verify(&problem, &params, method, step, out.as_deref())
        }
        Command::CubicCoeffs { k, delta } => run_cubic_coeffs(k, delta),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(1)
        }
    }
}

fn load(problem: &std::path::Path, grid_override: Option<usize>) -> Result<(ProblemSpec, TimeGrid)> {
    let mut spec = ProblemSpec::load(problem)?;
    if let Some(n) = grid_override {
        spec.grid_nodes = n;
    }
    let grid = TimeGrid::new(spec.grid_nodes, spec.horizon)?;
    Ok((spec, grid))
}

fn run_solve(
    problem: &std::path::Path,
    out: &std::path::Path,
    max_iter: Option<usize>,
    tol_i: Option<f64>,
    tol_grad: Option<f64>,
    grid_override: Option<usize>,
) -> Result<ExitCode> {
    let (spec, grid) = load(problem, grid_override)?;
    let mut config: DescentConfig = spec.descent;
    if let Some(v) = max_iter {
        config.max_outer_iters = v;
    }
    if let Some(v) = tol_i {
        config.tol_i = v;
    }
    if let Some(v) = tol_grad {
        config.tol_grad = v;
    }

    let z0 = DerivativeGrid::zeros(grid.len(), spec.n);
    let report = smsolve::solve(&spec, &grid, z0, spec.initial_params.clone(), &config)?;
    let x = build_state(&grid, &report.final_z, &spec.x0)?;

    let artifacts = io::RunArtifacts::new(out)?;
    io::write_trajectory_csv(&artifacts.trajectory_csv(), &grid, &x, &report.final_z)?;
    io::write_trace_csv(&artifacts.trace_csv(), &report.iterations)?;

    let verify_outcome = verify_solution(
        &spec,
        &report.params,
        &grid,
        &IntegrationMethod::default_adaptive(),
        Some(&x),
        config.tol_i,
    );
    let (verify_report, verify_error) = match verify_outcome {
        Ok((vr, _closed_loop)) => (Some(vr), None),
        Err(e) => (None, Some(e)),
    };
    if let Some(vr) = &verify_report {
        io::write_json(&artifacts.verify_json(), vr)?;
    }
    let document = io::report_document(&spec, grid.len(), &config, &report, verify_report.as_ref());
    io::write_json(&artifacts.report_json(), &document)?;

    println!(
        "solve: {} after {} outer iterations, I = {:.6e}, |grad| = {:.3e} ({:?})",
        if report.converged { "converged" } else { "did not converge" },
        report.outer_iters,
        report.final_breakdown.total,
        report.final_grad_norm,
        report.reason,
    );
    if let Some(vr) = &verify_report {
        for (idx, err) in &vr.endpoint_errors {
            println!("verify: |x{}(T) - target| = {:.3e}", idx, err);
        }
        println!(
            "verify: max inclusion residual {:.3e}{}",
            vr.max_inclusion_residual,
            vr.max_surface_residual
                .map(|s| format!(", max surface residual {:.3e}", s))
                .unwrap_or_default(),
        );
    }

    if !report.converged {
        return Ok(ExitCode::from(2));
    }
    if let Some(e) = verify_error {
        eprintln!("verification failed: {}", e);
        return Ok(ExitCode::from(3));
    }
    if let Some(vr) = &verify_report {
        if vr.crosscheck.as_ref().is_some_and(|c| !c.passed) {
            eprintln!("verification: closed-loop trajectory disagrees with the solver trajectory");
            return Ok(ExitCode::from(3));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_eval(problem: &std::path::Path, grid_override: Option<usize>) -> Result<ExitCode> {
    let (spec, grid) = load(problem, grid_override)?;
    let z = DerivativeGrid::zeros(grid.len(), spec.n);
    let breakdown = evaluate_for(&spec, &grid, &z, &spec.initial_params)?;
    println!("{}", serde_json::to_string_pretty(&breakdown).expect("breakdown serializes"));
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(
    problem: &std::path::Path,
    grid_override: Option<usize>,
    points: usize,
    step: f64,
    tol_z: f64,
    tol_p: f64,
    seed: u64,
) -> Result<ExitCode> {
    let (spec, grid) = load(problem, grid_override)?;
    let mut cases: Vec<(DerivativeGrid, Vec<f64>)> =
        vec![(DerivativeGrid::zeros(grid.len(), spec.n), spec.initial_params.clone())];
    for r in 0..points {
        cases.push(sample_smooth_point(&spec, &grid, seed.wrapping_add(r as u64), 1e-3)?);
    }

    let mut z_errors = Vec::new();
    let mut p_errors = Vec::new();
    for (z, p) in &cases {
        let analytic = gradient_for(&spec, &grid, z, p)?;
        let fd = numeric_gradient(
            |z, p| evaluate_for(&spec, &grid, z, p).map(|b| b.total),
            &grid,
            z,
            p,
            step,
        )?;
        let (ez, ep) = bundle_disagreement(&analytic, &fd);
        z_errors.push(ez);
        p_errors.push(ep);
    }
    let stats = |errs: &mut Vec<f64>| {
        errs.sort_by(f64::total_cmp);
        let max = *errs.last().unwrap_or(&0.0);
        let median = errs.get(errs.len() / 2).copied().unwrap_or(0.0);
        (max, median)
    };
    let (max_z, median_z) = stats(&mut z_errors);
    let (max_p, median_p) = stats(&mut p_errors);
    println!(
        "{}",
        serde_json::json!({
            "points": cases.len(),
            "z_part": {"max": max_z, "median": median_z, "tolerance": tol_z},
            "p_part": {"max": max_p, "median": median_p, "tolerance": tol_p},
        })
    );
    if max_z > tol_z || max_p > tol_p {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_verify(
    problem: &std::path::Path,
    params_path: &std::path::Path,
    method: MethodArg,
    step: Option<f64>,
    out: Option<&std::path::Path>,
) -> Result<ExitCode> {
    let (spec, grid) = load(problem, None)?;
    let params = io::read_params_json(params_path)?;
    let method = match method {
        MethodArg::Rk45 => IntegrationMethod::default_adaptive(),
        MethodArg::Rk4 => match step {
            Some(h) => IntegrationMethod::Rk4 { step: h },
            None => IntegrationMethod::default_fixed(spec.horizon),
        },
    };
    let (report, x) = verify_solution(&spec, &params, &grid, &method, None, spec.descent.tol_i)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(dir) = out {
        let artifacts = io::RunArtifacts::new(dir)?;
        io::write_json(&artifacts.verify_json(), &report)?;
        // derivative samples by forward differences, last node copies left
        let mut z = SampledTrajectory::zeros(grid.len(), spec.n);
        for k in 0..grid.len() {
            let (from, to) = if k + 1 < grid.len() { (k, k + 1) } else { (k - 1, k) };
            for i in 0..spec.n {
                z.set(k, i, (x.get(to, i) - x.get(from, i)) / grid.dt());
            }
        }
        io::write_trajectory_csv(&artifacts.trajectory_csv(), &grid, &x, &z)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_cubic_coeffs(k: f64, delta: f64) -> Result<ExitCode> {
    let coeffs = CubicCoeffs::derive(k, delta)?;
    println!("{}", serde_json::to_string_pretty(&coeffs).expect("coeffs serialize"));
    Ok(ExitCode::SUCCESS)
}
