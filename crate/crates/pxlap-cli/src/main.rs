//! Command-line front end for the mixed-exponent diffusion solver.
//!
//! Configuration comes from built-in defaults, then an optional
//! `key = value` config file, then command-line flag overrides. Every command
//! writes its artifacts (CSV data plus a `manifest.json` naming the command,
//! the effective config and its SHA-256) into `out_dir`; failures additionally
//! write `error.json` and mirror the message to stderr.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 contract or verification failure.

// Guards are written `!(x > y)` on purpose: unlike `x <= y`, the negated form
// also rejects NaN, and tolerances/couplings arriving as NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use config::{ConfigError, RunConfig};
use pxlap::branches::{
    bifurcation_scan, estimate_lambda_star, second_solution, verify_suite, BranchError,
    VerifyOptions,
};
use pxlap::mesh::Field;
use pxlap::solvers::{
    build_supersolution_small_lambda, kaplan_ode_bound, monotone_iteration, parabolic_blowup,
    IterationStatus, MpStatus, SolverError,
};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(
    name = "pxlap",
    version,
    about = "Mixed-exponent diffusion: minimal branches, threshold brackets, second solutions",
    after_help = "Config file grammar: UTF-8 lines `key = value`, `#` comments.\n\
        Keys: dimension, x_lo, x_hi, a, b, p, q, n, lambda, lambda_list,\n\
        newton_tol, monotone_tol, m_cap, mp_path_nodes, mp_tol, seed, out_dir.\n\
        Flags override file values; file values override the defaults shown in --help."
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flag mirrors of the config keys (defaults live in the config layer).
#[derive(Debug, Args)]
struct Overrides {
    /// Config file with `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Space dimension: 1 (interval) or 2 (symmetric square). [default: 1]
    #[arg(long, global = true)]
    dimension: Option<usize>,
    /// Left domain end. [default: 0]
    #[arg(long, global = true)]
    x_lo: Option<f64>,
    /// Right domain end. [default: 1]
    #[arg(long, global = true)]
    x_hi: Option<f64>,
    /// Lower face of the inner exponent-p region. [default: 0.4]
    #[arg(long, global = true)]
    a: Option<f64>,
    /// Upper face of the inner exponent-p region. [default: 0.6]
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Inner-region exponent (> 2). [default: 3]
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Source power (2 < q+1 < p). [default: 1.5]
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Grid nodes per axis. [default: 201]
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Coupling for single-coupling commands.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Comma-separated couplings for the bifurcation scan.
    #[arg(long, global = true, value_name = "L1,L2,…")]
    lambda_list: Option<String>,
    /// Newton residual tolerance. [default: 1e-10]
    #[arg(long, global = true)]
    newton_tol: Option<f64>,
    /// Sweep-to-sweep convergence tolerance. [default: 1e-9]
    #[arg(long, global = true)]
    monotone_tol: Option<f64>,
    /// Sup-norm cap in the divergence certificate. [default: 1e6]
    #[arg(long, global = true)]
    m_cap: Option<f64>,
    /// Mountain-pass path discretization nodes. [default: 41]
    #[arg(long, global = true)]
    mp_path_nodes: Option<usize>,
    /// Mountain-pass residual tolerance. [default: 1e-6]
    #[arg(long, global = true)]
    mp_tol: Option<f64>,
    /// Seed for randomized checks. [default: 42]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory. [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the monotone iteration to the minimal solution at `lambda`.
    SolveMinimal,
    /// Bracket the extinction threshold by certified probe bisection.
    LambdaStar {
        /// Target relative bracket width.
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
    },
    /// Tabulate the minimal branch over `lambda_list` (optionally the second).
    Bifurcation {
        /// Also run the mountain pass above each minimal solution.
        #[arg(long)]
        with_second: bool,
    },
    /// Find the second solution above the minimal one at `lambda`.
    MountainPass,
    /// Parabolic blow-up demonstration on an inner exponent-2 box.
    BlowupDemo,
    /// Run the self-check battery.
    Verify {
        /// Deliberately mis-scale the exponent-p Jacobian weights; the
        /// derivative check must then fail (exercises the failure path).
        #[arg(long)]
        inject_fault: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolveMinimal => "solve-minimal",
            Command::LambdaStar { .. } => "lambda-star",
            Command::Bifurcation { .. } => "bifurcation",
            Command::MountainPass => "mountain-pass",
            Command::BlowupDemo => "blowup-demo",
            Command::Verify { .. } => "verify",
        }
    }
}

/// A command failure: exit code plus the message for stderr and `error.json`.
struct CmdError {
    exit_code: i32,
    message: String,
}

impl CmdError {
    fn new(exit_code: i32, message: impl Into<String>) -> CmdError {
        CmdError { exit_code, message: message.into() }
    }
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> CmdError {
        CmdError::new(2, e.to_string())
    }
}

impl From<SolverError> for CmdError {
    fn from(e: SolverError) -> CmdError {
        CmdError::new(3, e.to_string())
    }
}

impl From<output::OutputError> for CmdError {
    fn from(e: output::OutputError) -> CmdError {
        CmdError::new(2, e.to_string())
    }
}

impl From<BranchError> for CmdError {
    fn from(e: BranchError) -> CmdError {
        let code = match e {
            BranchError::BadInput(_) => 2,
            _ => 3,
        };
        CmdError::new(code, e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

fn run(cli: Cli) -> i32 {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.overrides.config {
        if let Err(e) = cfg.apply_file(path) {
            let out_dir =
                PathBuf::from(cli.overrides.out_dir.clone().unwrap_or_else(|| cfg.out_dir.clone()));
            output::write_error(&out_dir, cli.command.name(), 2, &e.to_string());
            return 2;
        }
    }
    if let Err(e) = apply_overrides(&mut cfg, &cli.overrides) {
        let out_dir = PathBuf::from(&cfg.out_dir);
        output::write_error(&out_dir, cli.command.name(), 2, &e.to_string());
        return 2;
    }
    let out_dir = PathBuf::from(&cfg.out_dir);
    match dispatch(&cli.command, &cfg, &out_dir) {
        Ok(code) => code,
        Err(e) => {
            output::write_error(&out_dir, cli.command.name(), e.exit_code, &e.message);
            e.exit_code
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) -> Result<(), ConfigError> {
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(v) = o.$field { cfg.$field = v; })*
        };
    }
    take!(dimension, x_lo, x_hi, a, b, p, q, n, newton_tol, monotone_tol, m_cap, mp_path_nodes, mp_tol, seed);
    if let Some(v) = o.lambda {
        cfg.lambda = Some(v);
    }
    if let Some(s) = &o.lambda_list {
        let list = config::parse_lambda_list(s, 0).map_err(|_| {
            ConfigError::Constraint(format!(
                "flag --lambda-list: cannot parse `{s}` as a comma-separated list of numbers"
            ))
        })?;
        cfg.lambda_list = Some(list);
    }
    if let Some(s) = &o.out_dir {
        cfg.out_dir = s.clone();
    }
    Ok(())
}

fn dispatch(command: &Command, cfg: &RunConfig, out_dir: &Path) -> Result<i32, CmdError> {
    match command {
        Command::SolveMinimal => solve_minimal(cfg, out_dir),
        Command::LambdaStar { tol } => lambda_star(cfg, out_dir, *tol),
        Command::Bifurcation { with_second } => bifurcation(cfg, out_dir, *with_second),
        Command::MountainPass => mountain_pass_cmd(cfg, out_dir),
        Command::BlowupDemo => blowup_demo(cfg, out_dir),
        Command::Verify { inject_fault } => verify(cfg, out_dir, *inject_fault),
    }
}

fn elapsed_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

fn solve_minimal(cfg: &RunConfig, out_dir: &Path) -> Result<i32, CmdError> {
    let lambda = cfg.require_lambda()?;
    let grid = cfg.build_domain()?;
    let params = cfg.solver_params()?;
    let t0 = Instant::now();
    let out = monotone_iteration(&grid, lambda, None, &params)?;
    let mut artifacts = Vec::new();
    if let Some(sol) = &out.solution {
        output::write_text(out_dir, "solution.csv", &output::field_csv(sol))?;
        artifacts.push("solution.csv".to_string());
    }
    let final_sup = out.iterates_sup_norms.last().copied();
    let outcome = serde_json::json!({
        "lambda": lambda,
        "status": out.status.token(),
        "sweeps": out.iterations,
        "final_sup": final_sup,
        "final_residual_sup": out.final_residual_sup,
        "sup_trace": out.iterates_sup_norms,
        "energy_trace": out.energy_trace,
    });
    output::write_manifest(out_dir, "solve-minimal", cfg, &artifacts, elapsed_ms(t0), outcome)?;
    println!(
        "solve-minimal: {} at coupling {lambda:.6e} after {} sweeps (final sup {:.6e})",
        out.status,
        out.iterations,
        final_sup.unwrap_or(f64::NAN),
    );
    match out.status {
        IterationStatus::Converged => Ok(0),
        other => Err(CmdError::new(
            3,
            format!("monotone iteration ended {other} at coupling {lambda:.6e}"),
        )),
    }
}

/// Shared by the commands that need a certified convergent coupling: brackets
/// the threshold and returns the estimate.
fn bracket_threshold(
    grid: &std::sync::Arc<pxlap::mesh::Grid>,
    params: &pxlap::solvers::SolverParams,
    tol: f64,
) -> Result<pxlap::branches::LambdaStarEstimate, CmdError> {
    let upper = build_supersolution_small_lambda(grid, params)?;
    let bracket0 = (upper.lambda_tilde, 2.0 * upper.lambda_tilde);
    Ok(estimate_lambda_star(grid, bracket0, tol, params)?)
}

fn lambda_star(cfg: &RunConfig, out_dir: &Path, tol: f64) -> Result<i32, CmdError> {
    if !(tol > 0.0) {
        return Err(CmdError::new(2, format!("flag --tol: must be positive, got {tol}")));
    }
    let grid = cfg.build_domain()?;
    let params = cfg.solver_params()?;
    let t0 = Instant::now();
    let est = bracket_threshold(&grid, &params, tol)?;
    output::write_text(out_dir, "lambda_star_trace.csv", &est.trace_csv())?;
    let outcome = serde_json::json!({
        "lo": est.lo,
        "hi": est.hi,
        "width": est.width,
        "relative_width": est.width / est.lo,
        "probes": est.trace.len(),
    });
    output::write_manifest(
        out_dir,
        "lambda-star",
        cfg,
        &["lambda_star_trace.csv".to_string()],
        elapsed_ms(t0),
        outcome,
    )?;
    println!(
        "lambda-star: threshold in [{:.6e}, {:.6e}] (relative width {:.2e}, {} probes)",
        est.lo,
        est.hi,
        est.width / est.lo,
        est.trace.len(),
    );
    Ok(0)
}

fn bifurcation(cfg: &RunConfig, out_dir: &Path, with_second: bool) -> Result<i32, CmdError> {
    let lambdas = cfg.require_lambda_list()?.to_vec();
    let grid = cfg.build_domain()?;
    let params = cfg.solver_params()?;
    let mp = cfg.mp_params()?;
    let t0 = Instant::now();
    let est = bracket_threshold(&grid, &params, 1e-2)?;
    let table = bifurcation_scan(&grid, &lambdas, with_second, est.lo, &params, &mp)?;
    output::write_text(out_dir, "bifurcation.csv", &table.to_csv())?;
    output::write_text(out_dir, "lambda_star_trace.csv", &est.trace_csv())?;
    let failed_minimal: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| r.min_status != IterationStatus::Converged)
        .map(|r| r.lambda)
        .collect();
    let second_notes: Vec<String> = table
        .rows
        .iter()
        .filter_map(|r| r.note.as_ref().map(|n| format!("coupling {:.6e}: {n}", r.lambda)))
        .collect();
    let outcome = serde_json::json!({
        "lambda_star_lo": est.lo,
        "lambda_star_hi": est.hi,
        "with_second": with_second,
        "rows": table.rows,
        "row_notes": second_notes,
    });
    let artifacts = vec!["bifurcation.csv".to_string(), "lambda_star_trace.csv".to_string()];
    output::write_manifest(out_dir, "bifurcation", cfg, &artifacts, elapsed_ms(t0), outcome)?;
    println!(
        "bifurcation: {} couplings below threshold end {:.6e}{}",
        table.rows.len(),
        est.lo,
        if second_notes.is_empty() {
            String::new()
        } else {
            format!(" ({} row note(s), see manifest)", second_notes.len())
        },
    );
    if !failed_minimal.is_empty() {
        return Err(CmdError::new(
            3,
            format!("minimal branch failed to converge at couplings {failed_minimal:?}"),
        ));
    }
    // The minimal branch must grow with the coupling; a decrease means the
    // scan's rows contradict the branch ordering and the table is unusable.
    let sups: Vec<(f64, f64)> =
        table.rows.iter().filter_map(|r| r.min_sup.map(|s| (r.lambda, s))).collect();
    for pair in sups.windows(2) {
        if !(pair[1].1 > pair[0].1) {
            return Err(CmdError::new(
                4,
                format!(
                    "branch ordering violated: sup {:.6e} at coupling {:.6e} does not exceed sup {:.6e} at {:.6e}",
                    pair[1].1, pair[1].0, pair[0].1, pair[0].0
                ),
            ));
        }
    }
    Ok(0)
}

fn mountain_pass_cmd(cfg: &RunConfig, out_dir: &Path) -> Result<i32, CmdError> {
    let lambda = cfg.require_lambda()?;
    let grid = cfg.build_domain()?;
    let params = cfg.solver_params()?;
    let mp = cfg.mp_params()?;
    let t0 = Instant::now();
    let est = bracket_threshold(&grid, &params, 1e-2)?;
    if !(lambda > 0.0 && lambda < est.lo) {
        return Err(CmdError::new(
            2,
            format!(
                "key `lambda`: the mountain pass needs 0 < lambda < {:.6e} (certified converged end), got {lambda:.6e}",
                est.lo
            ),
        ));
    }
    let out = second_solution(&grid, lambda, est.lo, &params, &mp)
        .map_err(|msg| CmdError::new(3, msg))?;
    let mut artifacts = Vec::new();
    if out.status == MpStatus::Found {
        output::write_text(out_dir, "second_solution.csv", &output::field_csv(&out.critical_point))?;
        artifacts.push("second_solution.csv".to_string());
    }
    let outcome = serde_json::json!({
        "lambda": lambda,
        "lambda_star_lo": est.lo,
        "status": out.status.token(),
        "level": out.level,
        "base_level": out.base_level,
        "residual_sup": out.residual_sup,
        "outer_iterations": out.outer_iterations,
        "second_sup": if out.status == MpStatus::Found { Some(out.critical_point.sup_norm()) } else { None },
    });
    output::write_manifest(out_dir, "mountain-pass", cfg, &artifacts, elapsed_ms(t0), outcome)?;
    println!(
        "mountain-pass: {} at coupling {lambda:.6e} (level {:.6e}, residual {:.3e})",
        out.status, out.level, out.residual_sup,
    );
    match out.status {
        MpStatus::Found | MpStatus::PathCollapsed => Ok(0),
        MpStatus::MaxIter => Err(CmdError::new(
            3,
            format!("mountain pass exhausted its deformation budget at coupling {lambda:.6e}"),
        )),
    }
}

/// Demo fixtures: initial height, first step, horizon, blow-up threshold.
const BLOWUP_Z0: f64 = 10.0;
const BLOWUP_DT0: f64 = 1e-4;
const BLOWUP_T_MAX: f64 = 10.0;
const BLOWUP_THRESHOLD: f64 = 1e6;

fn blowup_demo(cfg: &RunConfig, out_dir: &Path) -> Result<i32, CmdError> {
    let lambda = cfg.lambda.unwrap_or(50.0);
    if lambda < 0.0 {
        return Err(CmdError::new(2, format!("key `lambda`: must be nonnegative, got {lambda}")));
    }
    let grid = cfg.build_domain()?;
    // Central three-quarters of the left exponent-2 slab (x), shrunk by an
    // eighth of the extent per side on the second axis; faces snap to nodes.
    let mx = (cfg.a - cfg.x_lo) / 8.0;
    let my = (cfg.x_hi - cfg.x_lo) / 8.0;
    let (lo, hi) = if cfg.dimension == 1 {
        ([cfg.x_lo + mx, 0.0], [cfg.a - mx, 0.0])
    } else {
        ([cfg.x_lo + mx, cfg.x_lo + my], [cfg.a - mx, cfg.x_hi - my])
    };
    let sub = grid.restrict_to_box(lo, hi).map_err(|e| CmdError::new(2, e.to_string()))?;
    let box_grid = sub.grid;
    let t0 = Instant::now();
    let z0 = Field::constant(&box_grid, BLOWUP_Z0);
    let bound = kaplan_ode_bound(&box_grid, lambda, &z0)?;
    let rep = parabolic_blowup(&box_grid, lambda, &z0, BLOWUP_DT0, BLOWUP_T_MAX, BLOWUP_THRESHOLD)?;
    output::write_text(
        out_dir,
        "blowup_trace.csv",
        &output::trace_csv("t,sup", &rep.times, &rep.supnorm_trace),
    )?;
    let outcome = serde_json::json!({
        "lambda": lambda,
        "initial_height": BLOWUP_Z0,
        "dt0": BLOWUP_DT0,
        "t_max": BLOWUP_T_MAX,
        "threshold": BLOWUP_THRESHOLD,
        "box_lo": lo,
        "box_hi": hi,
        "blew_up": rep.blew_up,
        "inconclusive": rep.inconclusive,
        "t_event": rep.t_event,
        "ode_bound": bound,
        "final_time": rep.final_time,
        "final_sup": rep.final_sup,
    });
    output::write_manifest(
        out_dir,
        "blowup-demo",
        cfg,
        &["blowup_trace.csv".to_string()],
        elapsed_ms(t0),
        outcome,
    )?;
    println!(
        "blowup-demo: coupling {lambda:.6e}, blew_up={}, t_event={:?}, scalar bound={:?}",
        rep.blew_up, rep.t_event, bound,
    );
    if rep.inconclusive {
        return Err(CmdError::new(
            3,
            "time stepping underflowed before reaching a certificate".to_string(),
        ));
    }
    if let (true, Some(t_event), Some(bound)) = (rep.blew_up, rep.t_event, bound) {
        if t_event >= bound {
            return Err(CmdError::new(
                4,
                format!(
                    "blow-up at t={t_event:.6e} did not precede the scalar comparison bound {bound:.6e}"
                ),
            ));
        }
    }
    Ok(0)
}

fn verify(cfg: &RunConfig, out_dir: &Path, inject_fault: bool) -> Result<i32, CmdError> {
    let grid = cfg.build_domain()?;
    let params = cfg.solver_params()?;
    let opts = VerifyOptions {
        seed: cfg.seed,
        fault_p_weight_scale: if inject_fault { Some(1.2) } else { None },
    };
    let t0 = Instant::now();
    let report = verify_suite(&grid, &opts, &params)?;
    for c in &report.checks {
        println!(
            "{} {} (margin {:.3e}) — {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.margin,
            c.detail,
        );
    }
    let mut report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    report_json.push('\n');
    output::write_text(out_dir, "verify_report.json", &report_json)?;
    let failed: Vec<&str> =
        report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let outcome = serde_json::json!({
        "all_passed": report.all_passed,
        "checks_run": report.checks.len(),
        "failed": failed,
        "fault_injected": inject_fault,
    });
    output::write_manifest(
        out_dir,
        "verify",
        cfg,
        &["verify_report.json".to_string()],
        elapsed_ms(t0),
        outcome,
    )?;
    if report.all_passed {
        println!("verify: all {} checks passed", report.checks.len());
        Ok(0)
    } else {
        Err(CmdError::new(4, format!("verification failed: {}", failed.join(", "))))
    }
}
