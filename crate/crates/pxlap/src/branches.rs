//! Sweeps over the coupling parameter and the self-check battery.
//!
//! Three entry points:
//!
//! * [`estimate_lambda_star`] brackets the extinction threshold — the
//!   coupling above which the monotone iteration stops settling and starts
//!   climbing past every bound — by expansion plus bisection on certified
//!   Converged/Diverged probes;
//! * [`bifurcation_scan`] tabulates, per coupling, the minimal solution and
//!   (optionally) the second solution the mountain pass finds above it;
//! * [`verify_suite`] runs the cross-cutting invariant battery (derivative
//!   consistency, conservation, ordering, scaling, operator reduction) and
//!   reports pass/fail with measured margins.

use crate::energy::{self, EnergyVariant};
use crate::mesh::{D2Layout, Field, Grid};
use crate::par;
use crate::solvers::{
    build_peak, build_subsolution, build_supersolution_small_lambda, minimize_truncated,
    monotone_iteration, mountain_pass, solve_auxiliary, solve_plaplacian_sublinear,
    IterationStatus, MpOutcome, MpParams, MpStatus, SolverError, SolverParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Errors of the sweep layer. Failures inside individual `bifurcation_scan`
/// rows do not surface here (they are recorded in the row); failures that
/// make a whole sweep meaningless do.
#[derive(Debug, thiserror::Error)]
pub enum BranchError {
    #[error("bad sweep input: {0}")]
    BadInput(String),
    #[error("no converged coupling found: every probe down to {floor:.6e} ended {last}")]
    NoConvergedCoupling { floor: f64, last: IterationStatus },
    #[error("no diverged coupling found: every probe up to {cap:.6e} ended {last}")]
    NoDivergedCoupling { cap: f64, last: IterationStatus },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_opt(x: Option<f64>) -> String {
    x.map(csv_float).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Threshold bracketing
// ---------------------------------------------------------------------------

/// One monotone-iteration probe of the threshold search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ProbeRecord {
    pub lambda: f64,
    pub status: IterationStatus,
    /// Sweeps the monotone iteration performed.
    pub iterations: usize,
    /// Sup norm of the last iterate.
    pub final_sup: f64,
}

/// Certified bracket around the extinction threshold.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LambdaStarEstimate {
    /// Largest probed coupling whose run certified Converged.
    pub lo: f64,
    /// Smallest probed coupling whose run certified Diverged.
    pub hi: f64,
    /// `hi - lo`.
    pub width: f64,
    /// Every probe, in execution order.
    pub trace: Vec<ProbeRecord>,
}

impl LambdaStarEstimate {
    /// Probe trace as CSV (`lambda,status,iterations,final_sup`).
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("lambda,status,iterations,final_sup\n");
        for r in &self.trace {
            s.push_str(&csv_float(r.lambda));
            s.push(',');
            s.push_str(r.status.token());
            s.push(',');
            s.push_str(&r.iterations.to_string());
            s.push(',');
            s.push_str(&csv_float(r.final_sup));
            s.push('\n');
        }
        s
    }
}

/// Sweep budget inside threshold probes. Near the threshold the iteration
/// crawls through a long almost-stationary transient before either
/// certificate fires, so probes get a higher cap than ordinary runs.
const PROBE_SWEEP_CAP: usize = 4000;
/// Total probes (expansion + bisection) before refinement stops.
const PROBE_BUDGET: usize = 96;
/// Bracket-expansion halvings/doublings allowed per side.
const EXPAND_MAX: usize = 60;

fn run_probe(
    grid: &Arc<Grid>,
    lambda: f64,
    params: &SolverParams,
    trace: &mut Vec<ProbeRecord>,
    budget: &mut usize,
) -> Result<IterationStatus, BranchError> {
    *budget = budget.saturating_sub(1);
    let out = monotone_iteration(grid, lambda, None, params)?;
    let final_sup = *out.iterates_sup_norms.last().expect("sup trace never empty");
    trace.push(ProbeRecord { lambda, status: out.status, iterations: out.iterations, final_sup });
    Ok(out.status)
}

/// Brackets the extinction threshold to relative width `tol`.
///
/// The bracket first expands (halving the lower end until a run certifies
/// Converged, doubling the upper end until one certifies Diverged), then
/// bisects. Only certified outcomes move an endpoint; a Stalled probe is
/// recorded, consumes budget, and triggers retries at the golden-section
/// offsets of the same bracket. If a full round of retries stalls too, the
/// estimate returns at its current width with the stalls visible in the
/// trace.
pub fn estimate_lambda_star(
    grid: &Arc<Grid>,
    bracket0: (f64, f64),
    tol: f64,
    params: &SolverParams,
) -> Result<LambdaStarEstimate, BranchError> {
    params.validate()?;
    let (mut lo, mut hi) = bracket0;
    if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
        return Err(BranchError::BadInput(format!(
            "threshold bracket must satisfy 0 < lo < hi, got ({lo:.6e}, {hi:.6e})"
        )));
    }
    if !(tol > 0.0) {
        return Err(BranchError::BadInput(format!(
            "relative width target must be positive, got {tol:.6e}"
        )));
    }
    let mut probe_params = params.clone();
    probe_params.monotone_max_iter = params.monotone_max_iter.max(PROBE_SWEEP_CAP);
    let mut trace = Vec::new();
    let mut budget = PROBE_BUDGET;

    // Certify convergence at the lower end, halving downward if needed. A
    // divergence seen on the way down tightens the upper end for free.
    let mut status = run_probe(grid, lo, &probe_params, &mut trace, &mut budget)?;
    for _ in 0..EXPAND_MAX {
        if status == IterationStatus::Converged || budget == 0 {
            break;
        }
        if status == IterationStatus::Diverged && lo < hi {
            hi = lo;
        }
        lo *= 0.5;
        status = run_probe(grid, lo, &probe_params, &mut trace, &mut budget)?;
    }
    if status != IterationStatus::Converged {
        return Err(BranchError::NoConvergedCoupling { floor: lo, last: status });
    }

    // Certify divergence at the upper end, doubling upward if needed; a
    // convergence seen on the way up lifts the lower end.
    let mut status = run_probe(grid, hi, &probe_params, &mut trace, &mut budget)?;
    for _ in 0..EXPAND_MAX {
        if status == IterationStatus::Diverged || budget == 0 {
            break;
        }
        if status == IterationStatus::Converged && hi > lo {
            lo = hi;
        }
        hi *= 2.0;
        status = run_probe(grid, hi, &probe_params, &mut trace, &mut budget)?;
    }
    if status != IterationStatus::Diverged {
        return Err(BranchError::NoDivergedCoupling { cap: hi, last: status });
    }

    // Bisection. Stalls never classify; they only spend budget.
    const OFFSETS: [f64; 3] = [0.5, 0.381_966_011_250_105, 0.618_033_988_749_895];
    'refine: while hi - lo > tol * lo && budget > 0 {
        for &theta in &OFFSETS {
            if budget == 0 {
                break 'refine;
            }
            let mid = lo + theta * (hi - lo);
            if !(lo < mid && mid < hi) {
                break 'refine; // bracket narrower than f64 resolution
            }
            match run_probe(grid, mid, &probe_params, &mut trace, &mut budget)? {
                IterationStatus::Converged => {
                    lo = mid;
                    continue 'refine;
                }
                IterationStatus::Diverged => {
                    hi = mid;
                    continue 'refine;
                }
                IterationStatus::Stalled => {}
            }
        }
        // All offsets of this bracket stalled; identical retries cannot
        // certify anything new.
        break;
    }

    // Consistency of the whole trace: a certified convergence above a
    // certified divergence would contradict the monotone branch structure
    // the bisection relies on.
    let max_conv = trace
        .iter()
        .filter(|r| r.status == IterationStatus::Converged)
        .map(|r| r.lambda)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_div = trace
        .iter()
        .filter(|r| r.status == IterationStatus::Diverged)
        .map(|r| r.lambda)
        .fold(f64::INFINITY, f64::min);
    assert!(
        max_conv < min_div,
        "probe trace violates branch monotonicity: converged at {max_conv:.6e} above diverged at {min_div:.6e}"
    );

    Ok(LambdaStarEstimate { lo, hi, width: hi - lo, trace })
}

// ---------------------------------------------------------------------------
// Two-branch tables
// ---------------------------------------------------------------------------

/// One coupling in a [`BranchTable`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct BranchRow {
    pub lambda: f64,
    /// Outcome of the minimal-branch monotone iteration.
    pub min_status: IterationStatus,
    /// Sup norm of the minimal solution (present when it converged).
    pub min_sup: Option<f64>,
    /// Energy of the minimal solution (present when it converged).
    pub min_energy: Option<f64>,
    /// Mountain-pass outcome; `None` when the second branch was skipped or an
    /// upstream stage failed (see `note`).
    pub sec_status: Option<MpStatus>,
    /// Sup norm of the second solution (only when the pass found one).
    pub sec_sup: Option<f64>,
    /// Energy level of the path maximum (whenever the pass ran).
    pub sec_level: Option<f64>,
    /// Failure detail for rows whose second-branch pipeline broke down.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-coupling results of [`bifurcation_scan`], in input order.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BranchTable {
    pub rows: Vec<BranchRow>,
}

impl BranchTable {
    /// Fixed-header CSV (`lambda,min_sup,min_energy,sec_sup,sec_level,sec_status`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,min_sup,min_energy,sec_sup,sec_level,sec_status\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_float(r.lambda),
                csv_opt(r.min_sup),
                csv_opt(r.min_energy),
                csv_opt(r.sec_sup),
                csv_opt(r.sec_level),
                r.sec_status.map(MpStatus::token).unwrap_or(""),
            ));
        }
        s
    }
}

/// Tabulates the minimal branch (and optionally the second branch) at each
/// coupling in `lambdas`, which must be strictly ascending, positive, and
/// below `lambda_star_lo` — a coupling whose convergence has been certified,
/// normally the `lo` end of [`estimate_lambda_star`].
///
/// Rows are independent and evaluated through [`par::map_collect`]; the table
/// preserves input order. Failures inside a row (a stalled pin, an escaped
/// interval minimizer, a broken pass) are recorded in the row and the scan
/// continues.
pub fn bifurcation_scan(
    grid: &Arc<Grid>,
    lambdas: &[f64],
    with_second: bool,
    lambda_star_lo: f64,
    params: &SolverParams,
    mp: &MpParams,
) -> Result<BranchTable, BranchError> {
    params.validate()?;
    if !(lambda_star_lo > 0.0 && lambda_star_lo.is_finite()) {
        return Err(BranchError::BadInput(format!(
            "certified converged coupling must be positive and finite, got {lambda_star_lo:.6e}"
        )));
    }
    if let Some(&first) = lambdas.first() {
        if !(first > 0.0) {
            return Err(BranchError::BadInput(format!(
                "couplings must be positive, got {first:.6e}"
            )));
        }
    }
    if let Some(&last) = lambdas.last() {
        if !(last < lambda_star_lo) {
            return Err(BranchError::BadInput(format!(
                "couplings must stay below the certified converged end {lambda_star_lo:.6e}, got {last:.6e}"
            )));
        }
    }
    for pair in lambdas.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(BranchError::BadInput(format!(
                "couplings must be strictly ascending, got {:.6e} then {:.6e}",
                pair[0], pair[1]
            )));
        }
    }
    let rows = par::map_collect(lambdas.to_vec(), |lambda| {
        scan_row(grid, lambda, with_second, lambda_star_lo, params, mp)
    });
    Ok(BranchTable { rows })
}

fn scan_row(
    grid: &Arc<Grid>,
    lambda: f64,
    with_second: bool,
    lambda_star_lo: f64,
    params: &SolverParams,
    mp: &MpParams,
) -> BranchRow {
    let mut row = BranchRow {
        lambda,
        min_status: IterationStatus::Stalled,
        min_sup: None,
        min_energy: None,
        sec_status: None,
        sec_sup: None,
        sec_level: None,
        note: None,
    };
    match monotone_iteration(grid, lambda, None, params) {
        Ok(out) => {
            row.min_status = out.status;
            if let Some(sol) = out.solution {
                row.min_sup = Some(sol.sup_norm());
                row.min_energy = Some(
                    energy::energy(&sol, &EnergyVariant::plain(lambda))
                        .expect("plain variant accepts any grid"),
                );
            }
        }
        Err(e) => {
            row.note = Some(format!("minimal branch: {e}"));
            return row;
        }
    }
    if !with_second {
        return row;
    }
    match second_solution(grid, lambda, lambda_star_lo, params, mp) {
        Ok(out) => {
            row.sec_status = Some(out.status);
            row.sec_level = Some(out.level);
            if out.status == MpStatus::Found {
                row.sec_sup = Some(out.critical_point.sup_norm());
            }
        }
        Err(detail) => row.note = Some(format!("second branch: {detail}")),
    }
    row
}

/// The second-branch pipeline at one coupling: pin the truncation interval
/// with minimal solutions at `0.9λ` and `min(1.1λ, lambda_star_lo)`, minimize
/// the interval-truncated functional to the stable solution between them,
/// then run the mountain pass above the floor-truncated functional.
///
/// `lambda_star_lo` must be a coupling whose convergence has been certified.
/// Errors are rendered into strings naming the stage that broke, ready for
/// row notes or user-facing reports.
pub fn second_solution(
    grid: &Arc<Grid>,
    lambda: f64,
    lambda_star_lo: f64,
    params: &SolverParams,
    mp: &MpParams,
) -> Result<MpOutcome, String> {
    let lambda1 = 0.9 * lambda;
    let lambda2 = (1.1 * lambda).min(lambda_star_lo);
    if !(0.0 < lambda1 && lambda1 < lambda && lambda < lambda2) {
        return Err(format!(
            "cannot pinch {lambda:.6e} between 0.9λ and min(1.1λ, {lambda_star_lo:.6e})"
        ));
    }
    let u1 = converged_minimal(grid, lambda1, params)?;
    let u2 = converged_minimal(grid, lambda2, params)?;
    let utilde = minimize_truncated(lambda, &u1, &u2, params)
        .map_err(|e| format!("ordered-interval minimizer: {e}"))?;
    let variant = EnergyVariant::floor_truncated(lambda, u1)
        .map_err(|e| format!("floor functional: {e}"))?;
    let peak = build_peak(&variant, &utilde).map_err(|e| format!("peak construction: {e}"))?;
    mountain_pass(&variant, &utilde, &peak, params, mp).map_err(|e| format!("mountain pass: {e}"))
}

fn converged_minimal(
    grid: &Arc<Grid>,
    lambda: f64,
    params: &SolverParams,
) -> Result<Field, String> {
    let out = monotone_iteration(grid, lambda, None, params)
        .map_err(|e| format!("pin at {lambda:.6e}: {e}"))?;
    match out.status {
        IterationStatus::Converged => {
            Ok(out.solution.expect("converged outcome carries a solution"))
        }
        other => Err(format!("pin at {lambda:.6e}: monotone iteration ended {other}")),
    }
}

// ---------------------------------------------------------------------------
// Self-check battery
// ---------------------------------------------------------------------------

/// Knobs of [`verify_suite`].
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Seed of the randomized probes (fields and directions).
    pub seed: u64,
    /// When set, every exponent-p edge weight in the Jacobian cross-check is
    /// multiplied by this factor — the deliberate-fault fixture. Any value
    /// other than 1 must make that check fail.
    pub fault_p_weight_scale: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> VerifyOptions {
        VerifyOptions { seed: 42, fault_p_weight_scale: None }
    }
}

/// One entry of the battery.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// The measured figure the decision was made on; see `detail` for units.
    pub margin: f64,
    pub detail: String,
}

/// Output of [`verify_suite`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

fn check(name: &'static str, passed: bool, margin: f64, detail: String) -> CheckResult {
    CheckResult { name, passed, margin, detail }
}

fn fail(name: &'static str, detail: String) -> CheckResult {
    CheckResult { name, passed: false, margin: f64::NAN, detail }
}

/// Shorthand for battery steps whose setup may fail: a setup failure is a
/// failed check, never a panic or an early return of the whole suite.
macro_rules! try_check {
    ($name:expr, $expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(e) => return fail($name, format!("setup failed: {e}")),
        }
    };
}

/// Runs the full invariant battery on `grid` and reports per-check outcomes.
/// Failures are report entries; the only hard errors are invalid `params`.
///
/// Checks are independent and run through [`par::map_collect`]; each owns a
/// seed derived from `opts.seed`, so the report does not depend on execution
/// order or on the `parallel` feature.
pub fn verify_suite(
    grid: &Arc<Grid>,
    opts: &VerifyOptions,
    params: &SolverParams,
) -> Result<VerifyReport, BranchError> {
    params.validate()?;
    let seed = opts.seed;
    let fault = opts.fault_p_weight_scale;
    type Job<'a> = Box<dyn FnOnce() -> CheckResult + Send + 'a>;
    let jobs: Vec<Job<'_>> = vec![
        Box::new(move || check_gradient_consistency(grid, seed, params)),
        Box::new(move || check_jacobian_consistency(grid, seed.wrapping_add(1), params, fault)),
        Box::new(move || check_flux_balance(grid, params)),
        Box::new(move || check_variant_agreement(grid, seed.wrapping_add(2), params)),
        Box::new(move || check_aux_convexity(grid, seed.wrapping_add(3))),
        Box::new(move || check_aux_oracles(params)),
        Box::new(move || check_scaling_law(grid, params)),
        Box::new(move || check_subsolution_sign(grid, params)),
        Box::new(move || check_supersolution_sign(grid, params)),
        Box::new(move || check_monotone_chain(grid, params)),
        Box::new(move || check_load_comparison(grid, seed.wrapping_add(4), params)),
        Box::new(move || check_lambda_monotonicity(grid, params)),
        Box::new(move || check_positivity(grid, params)),
        Box::new(move || check_p2_operator_identity(seed.wrapping_add(5))),
        Box::new(move || check_p2_pipeline_agreement(params)),
    ];
    let checks = par::map_collect(jobs, |job| job());
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, all_passed })
}

/// Interior-supported field with iid uniform values in `[-amp, amp]`.
fn random_field(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, amp: f64) -> Field {
    let mut f = Field::zero(grid);
    for &idx in grid.interior_nodes() {
        let v = amp * (2.0 * rng.gen::<f64>() - 1.0);
        f.set(idx, v);
    }
    f
}

/// Plain nodal dot product over interior nodes (the pairing in which the
/// residual field is the exact gradient of the energy).
fn dot_interior(a: &Field, b: &Field) -> f64 {
    a.grid().interior_nodes().iter().map(|&i| a.get(i) * b.get(i)).sum()
}

/// Strictly positive, strictly ordered pin pair for the truncated variants:
/// half and all of the unit-load profile.
fn truncation_pins(grid: &Arc<Grid>, params: &SolverParams) -> Result<(Field, Field), SolverError> {
    let ubar = solve_auxiliary(grid, &Field::constant(grid, 1.0), params)?;
    Ok((ubar.scaled(0.5), ubar))
}

fn check_gradient_consistency(
    grid: &Arc<Grid>,
    seed: u64,
    params: &SolverParams,
) -> CheckResult {
    const NAME: &str = "gradient-consistency";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo_pin, hi_pin) = try_check!(NAME, truncation_pins(grid, params));
    let variants: [(&str, EnergyVariant); 4] = [
        ("plain", EnergyVariant::plain(0.7)),
        ("positive-part", EnergyVariant::positive_part(0.7)),
        (
            "interval-truncated",
            try_check!(NAME, EnergyVariant::interval_truncated(0.7, lo_pin.clone(), hi_pin.clone())),
        ),
        ("floor-truncated", try_check!(NAME, EnergyVariant::floor_truncated(0.7, lo_pin))),
    ];
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let mut worst_at = "plain";
    for (label, variant) in &variants {
        for _ in 0..5 {
            let u = random_field(grid, &mut rng, 1.0);
            let d = random_field(grid, &mut rng, 1.0);
            let mut up = u.clone();
            up.add_scaled(eps, &d);
            let mut dn = u.clone();
            dn.add_scaled(-eps, &d);
            let ep = try_check!(NAME, energy::energy(&up, variant));
            let em = try_check!(NAME, energy::energy(&dn, variant));
            let fd = (ep - em) / (2.0 * eps);
            let g = try_check!(NAME, energy::residual(&u, variant));
            let exact = dot_interior(&g, &d);
            let rel = (fd - exact).abs() / fd.abs().max(exact.abs()).max(1e-12);
            if rel > worst {
                worst = rel;
                worst_at = label;
            }
        }
    }
    check(
        NAME,
        worst < 1e-6,
        worst,
        format!(
            "max relative defect {worst:.3e} (worst: {worst_at}) over 5 random fields per functional, central differences at step {eps:.0e}"
        ),
    )
}

fn check_jacobian_consistency(
    grid: &Arc<Grid>,
    seed: u64,
    params: &SolverParams,
    fault: Option<f64>,
) -> CheckResult {
    const NAME: &str = "jacobian-consistency";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = EnergyVariant::plain(0.7);
    let scale = fault.unwrap_or(1.0);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let u = random_field(grid, &mut rng, 1.0);
        let d = random_field(grid, &mut rng, 1.0);
        let j = try_check!(
            NAME,
            energy::jacobian_with_p_weight_fault(&u, &variant, params.reg_eps, scale)
        );
        let jd = j.matvec(&d.interior_vec());
        let mut up = u.clone();
        up.add_scaled(eps, &d);
        let mut dn = u.clone();
        dn.add_scaled(-eps, &d);
        let rp = try_check!(NAME, energy::residual(&up, &variant)).interior_vec();
        let rm = try_check!(NAME, energy::residual(&dn, &variant)).interior_vec();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..jd.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * eps);
            num = num.max((fd - jd[i]).abs());
            den = den.max(jd[i].abs()).max(fd.abs());
        }
        worst = worst.max(num / den.max(1e-12));
    }
    check(
        NAME,
        worst < 1e-4,
        worst,
        format!(
            "max relative defect {worst:.3e} between assembled Jacobian action and differenced residuals (p-edge weight scale {scale})"
        ),
    )
}

fn check_flux_balance(grid: &Arc<Grid>, params: &SolverParams) -> CheckResult {
    const NAME: &str = "flux-balance";
    let f = Field::constant(grid, 1.0);
    let u = try_check!(NAME, solve_auxiliary(grid, &f, params));
    let load_total: f64 =
        grid.interior_nodes().iter().map(|&i| grid.node_measure(i) * f.get(i)).sum();
    let boundary = energy::boundary_gradient_flux_sum(&u);
    let rel = (boundary + load_total).abs() / load_total.abs().max(1e-300);
    check(
        NAME,
        rel <= 1e-7,
        rel,
        format!(
            "boundary flux total {boundary:.12e} against interior load {load_total:.12e}; relative defect {rel:.3e}"
        ),
    )
}

fn check_variant_agreement(grid: &Arc<Grid>, seed: u64, params: &SolverParams) -> CheckResult {
    const NAME: &str = "variant-agreement";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plain = EnergyVariant::plain(0.7);
    let positive = EnergyVariant::positive_part(0.7);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let mut u = random_field(grid, &mut rng, 1.0);
        u.map_interior(f64::abs);
        let e1 = try_check!(NAME, energy::energy(&u, &plain));
        let e2 = try_check!(NAME, energy::energy(&u, &positive));
        let r1 = try_check!(NAME, energy::residual(&u, &plain));
        let r2 = try_check!(NAME, energy::residual(&u, &positive));
        worst = worst.max((e1 - e2).abs() / (1.0 + e1.abs()));
        worst = worst.max(r1.max_abs_diff(&r2) / (1.0 + r1.sup_norm()));
    }
    let (lo_pin, hi_pin) = try_check!(NAME, truncation_pins(grid, params));
    let mid = lo_pin.lerp(&hi_pin, 0.5);
    let trunc =
        try_check!(NAME, EnergyVariant::interval_truncated(0.7, lo_pin, hi_pin));
    let rt = try_check!(NAME, energy::residual(&mid, &trunc));
    let rf = try_check!(NAME, energy::residual(&mid, &plain));
    worst = worst.max(rt.max_abs_diff(&rf) / (1.0 + rf.sup_norm()));
    check(
        NAME,
        worst <= 1e-12,
        worst,
        format!(
            "max normalized disagreement {worst:.3e}: positive-part functional on nonnegative fields and interval-truncated functional strictly inside its interval must match the plain one"
        ),
    )
}

fn check_aux_convexity(grid: &Arc<Grid>, seed: u64) -> CheckResult {
    const NAME: &str = "aux-convexity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Field::constant(grid, 1.0);
    let mut worst = f64::INFINITY;
    for _ in 0..3 {
        let u = random_field(grid, &mut rng, 1.0);
        let v = random_field(grid, &mut rng, 1.0);
        let mid = u.lerp(&v, 0.5);
        let eu = energy::aux_energy(&u, &f);
        let ev = energy::aux_energy(&v, &f);
        let em = energy::aux_energy(&mid, &f);
        let scale = 1.0 + eu.abs().max(ev.abs());
        worst = worst.min((0.5 * (eu + ev) - em) / scale);
    }
    check(
        NAME,
        worst >= -1e-12,
        worst,
        format!(
            "min normalized midpoint gap {worst:.3e}; the load functional must be convex along every segment"
        ),
    )
}

fn check_aux_oracles(params: &SolverParams) -> CheckResult {
    const NAME: &str = "aux-oracles";
    let n = 201;
    let g2 = try_check!(
        NAME,
        Grid::uniform(1, [0.0, 0.0], [1.0, 1.0], [n, 1], 3.0, 1.5, D2Layout::Empty)
    );
    let u2 = try_check!(NAME, solve_auxiliary(&g2, &Field::constant(&g2, 1.0), params));
    let err2 = (u2.sup_norm() - 0.125).abs();
    let g3 = try_check!(
        NAME,
        Grid::uniform(1, [0.0, 0.0], [1.0, 1.0], [n, 1], 3.0, 1.5, D2Layout::Full)
    );
    let u3 = try_check!(NAME, solve_auxiliary(&g3, &Field::constant(&g3, 1.0), params));
    let oracle3 = (2.0 / 3.0) * 0.5f64.powf(1.5);
    let err3 = (u3.sup_norm() - oracle3).abs();
    let worst = err2.max(err3);
    check(
        NAME,
        worst < 1e-3,
        worst,
        format!(
            "unit-load peaks: exponent-2 grid off by {err2:.3e} from 1/8, exponent-3 grid off by {err3:.3e} from (2/3)(1/2)^{{3/2}}"
        ),
    )
}

fn check_scaling_law(grid: &Arc<Grid>, params: &SolverParams) -> CheckResult {
    const NAME: &str = "scaling-law";
    let sub = try_check!(NAME, grid.restrict_to_d2());
    let gamma = 1.0 / (grid.p() - 1.0 - grid.q());
    let v1 = try_check!(NAME, solve_plaplacian_sublinear(&sub.grid, 1.0, params));
    let v2 = try_check!(NAME, solve_plaplacian_sublinear(&sub.grid, 2.0, params));
    let pred = v1.scaled(2.0f64.powf(gamma));
    let defect = v2.max_abs_diff(&pred) / v2.sup_norm().max(1e-300);
    check(
        NAME,
        defect < 1e-6,
        defect,
        format!(
            "inner solutions at couplings 1 and 2: relative defect {defect:.3e} against the exact power rescaling with exponent {gamma}"
        ),
    )
}

fn check_subsolution_sign(grid: &Arc<Grid>, params: &SolverParams) -> CheckResult {
    const NAME: &str = "subsolution-sign";
    let sub = try_check!(NAME, build_subsolution(grid, 1.0, params));
    check(
        NAME,
        sub.residual_max <= 1e-12,
        sub.residual_max,
        format!(
            "max interior residual {:.3e}; the zero-extended inner solution must sit weakly below the equation",
            sub.residual_max
        ),
    )
}

fn check_supersolution_sign(grid: &Arc<Grid>, params: &SolverParams) -> CheckResult {
    const NAME: &str = "supersolution-sign";
    let upper = try_check!(NAME, build_supersolution_small_lambda(grid, params));
    check(
        NAME,
        upper.residual_min >= -1e-12,
        upper.residual_min,
        format!(
            "min interior residual {:.3e} at the threshold coupling {:.6e}; the unit-load profile must sit weakly above the equation there",
            upper.residual_min, upper.lambda_tilde
        ),
    )
}

fn check_monotone_chain(grid: &Arc<Grid>, params: &SolverParams) -> CheckResult {
    const NAME: &str = "monotone-chain";
    let upper = try_check!(NAME, build_supersolution_small_lambda(grid, params));
    let lambda = upper.lambda_tilde / 2.0;
    let out = try_check!(NAME, monotone_iteration(grid, lambda, None, params));
    if out.status != IterationStatus::Converged {
        return fail(NAME, format!("iteration at coupling {lambda:.6e} ended {}", out.status));
    }
    let sol = out.solution.expect("converged outcome carries a solution");
    let mut chain_defect = 0.0f64;
    for pair in out.iterates_sup_norms.windows(2) {
        chain_defect = chain_defect.max(pair[0] - pair[1]);
    }
    let mut dominate_defect = f64::NEG_INFINITY;
    for &idx in grid.interior_nodes() {
        dominate_defect = dominate_defect.max(sol.get(idx) - upper.field.get(idx));
    }
    let residual = out.final_residual_sup.unwrap_or(f64::INFINITY);
    let passed =
        chain_defect <= 1e-12 && dominate_defect <= 1e-10 && residual <= params.newton_tol;
    check(
        NAME,
        passed,
        dominate_defect,
        format!(
            "chain decrease defect {chain_defect:.3e} (sup norms must not drop), excess over the upper barrier {dominate_defect:.3e}, final residual {residual:.3e}"
        ),
    )
}

fn check_load_comparison(grid: &Arc<Grid>, seed: u64, params: &SolverParams) -> CheckResult {
    const NAME: &str = "load-comparison";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = random_field(grid, &mut rng, 1.0);
    f.map_interior(f64::abs);
    let mut extra = random_field(grid, &mut rng, 1.0);
    extra.map_interior(f64::abs);
    let mut g = f.clone();
    g.add_scaled(1.0, &extra);
    let uf = try_check!(NAME, solve_auxiliary(grid, &f, params));
    let ug = try_check!(NAME, solve_auxiliary(grid, &g, params));
    let mut defect = f64::NEG_INFINITY;
    for &idx in grid.interior_nodes() {
        defect = defect.max(uf.get(idx) - ug.get(idx));
    }
    let slack = 1e-8 * ug.sup_norm().max(1.0);
    check(
        NAME,
        defect <= slack,
        defect,
        format!(
            "max excess {defect:.3e} of the smaller-load solution over the larger-load one (ordering slack {slack:.1e})"
        ),
    )
}

fn check_lambda_monotonicity(grid: &Arc<Grid>, params: &SolverParams) -> CheckResult {
    const NAME: &str = "coupling-monotonicity";
    let upper = try_check!(NAME, build_supersolution_small_lambda(grid, params));
    let la = 0.3 * upper.lambda_tilde;
    let lb = 0.6 * upper.lambda_tilde;
    let ua = try_check!(NAME, converged_minimal(grid, la, params).map_err(SetupText));
    let ub = try_check!(NAME, converged_minimal(grid, lb, params).map_err(SetupText));
    let mut defect = f64::NEG_INFINITY;
    for &idx in grid.interior_nodes() {
        defect = defect.max(ua.get(idx) - ub.get(idx));
    }
    check(
        NAME,
        defect <= 1e-9,
        defect,
        format!(
            "max excess {defect:.3e} of the minimal solution at coupling {la:.4e} over the one at {lb:.4e}; the minimal branch must grow with the coupling"
        ),
    )
}

fn check_positivity(grid: &Arc<Grid>, params: &SolverParams) -> CheckResult {
    const NAME: &str = "positivity";
    let upper = try_check!(NAME, build_supersolution_small_lambda(grid, params));
    let lambda = upper.lambda_tilde / 2.0;
    let sol = try_check!(NAME, converged_minimal(grid, lambda, params).map_err(SetupText));
    let min = sol.min_interior();
    check(
        NAME,
        min > 0.0,
        min,
        format!(
            "smallest interior value {min:.3e} of the minimal solution at coupling {lambda:.6e}; nontrivial nonnegative solutions must be strictly positive inside"
        ),
    )
}

/// Adapter so row-note strings can flow through `try_check!` like errors.
#[derive(Debug)]
struct SetupText(String);

impl std::fmt::Display for SetupText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn check_p2_operator_identity(seed: u64) -> CheckResult {
    const NAME: &str = "exponent2-operator-identity";
    let n = 101;
    let boxed = try_check!(
        NAME,
        Grid::uniform(
            1,
            [0.0, 0.0],
            [1.0, 1.0],
            [n, 1],
            2.0,
            1.5,
            D2Layout::Box { lo: [0.4, f64::NEG_INFINITY], hi: [0.6, f64::INFINITY] },
        )
    );
    let plain_grid = try_check!(
        NAME,
        Grid::uniform(1, [0.0, 0.0], [1.0, 1.0], [n, 1], 2.0, 1.5, D2Layout::Empty)
    );
    let variant = EnergyVariant::plain(0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let ua = random_field(&boxed, &mut rng, 1.0);
        let mut ub = Field::zero(&plain_grid);
        for &idx in plain_grid.interior_nodes() {
            ub.set(idx, ua.get(idx));
        }
        let ea = try_check!(NAME, energy::energy(&ua, &variant));
        let eb = try_check!(NAME, energy::energy(&ub, &variant));
        worst = worst.max((ea - eb).abs() / (1.0 + ea.abs()));
        let ra = try_check!(NAME, energy::residual(&ua, &variant));
        let rb = try_check!(NAME, energy::residual(&ub, &variant));
        let mut rdiff = 0.0f64;
        for idx in 0..plain_grid.node_count() {
            rdiff = rdiff.max((ra.get(idx) - rb.get(idx)).abs());
        }
        worst = worst.max(rdiff / (1.0 + ra.sup_norm()));
        let ja = try_check!(NAME, energy::jacobian(&ua, &variant, 1e-8));
        let jb = try_check!(NAME, energy::jacobian(&ub, &variant, 1e-8));
        let d: Vec<f64> = (0..ja.size()).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        let (jda, jdb) = (ja.matvec(&d), jb.matvec(&d));
        let mut jdiff = 0.0f64;
        for i in 0..jda.len() {
            jdiff = jdiff.max((jda[i] - jdb[i]).abs());
        }
        worst = worst.max(jdiff / (1.0 + jda.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }
    check(
        NAME,
        worst <= 1e-14,
        worst,
        format!(
            "max normalized mismatch {worst:.3e}: with the inner exponent set to 2 the mixed operator must coincide with the single-exponent one on identical fields"
        ),
    )
}

fn check_p2_pipeline_agreement(params: &SolverParams) -> CheckResult {
    const NAME: &str = "exponent2-pipeline-agreement";
    // With the inner exponent set to 2 the whole domain sees the same
    // operator, and for a power below 1 the positive solution is unique; the
    // increasing run from the canonical inner subsolution and the decreasing
    // run from the unit-load profile (an upper barrier at coupling 1, its sup
    // staying below 1) must then meet at the same field.
    let n = 101;
    let grid = try_check!(
        NAME,
        Grid::uniform(
            1,
            [0.0, 0.0],
            [1.0, 1.0],
            [n, 1],
            2.0,
            0.5,
            D2Layout::Box { lo: [0.4, f64::NEG_INFINITY], hi: [0.6, f64::INFINITY] },
        )
    );
    let lambda = 1.0;
    let from_below = try_check!(NAME, converged_minimal(&grid, lambda, params).map_err(SetupText));
    let barrier = try_check!(NAME, solve_auxiliary(&grid, &Field::constant(&grid, 1.0), params));
    let above = try_check!(NAME, monotone_iteration(&grid, lambda, Some(&barrier), params));
    if above.status != IterationStatus::Converged {
        return fail(NAME, format!("run from the upper barrier ended {}", above.status));
    }
    let from_above = above.solution.expect("converged outcome carries a solution");
    let defect = from_below.max_abs_diff(&from_above);
    check(
        NAME,
        defect <= 1e-8,
        defect,
        format!(
            "sup distance {defect:.3e} between the monotone limits from below and from above the unique single-exponent solution"
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, DomainSpec};

    fn mixed_grid(n: usize) -> Arc<Grid> {
        let spec = DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).unwrap();
        build_grid(&spec, n).unwrap()
    }

    fn lambda_tilde(grid: &Arc<Grid>, params: &SolverParams) -> f64 {
        build_supersolution_small_lambda(grid, params).unwrap().lambda_tilde
    }

    #[test]
    fn threshold_bracket_certifies_both_ends() {
        let grid = mixed_grid(61);
        let params = SolverParams::default();
        let est = estimate_lambda_star(&grid, (1.0, 50.0), 0.1, &params).unwrap();
        assert!(0.0 < est.lo && est.lo < est.hi);
        assert!(est.width <= 0.1 * est.lo, "width {} lo {}", est.width, est.lo);
        assert!(!est.trace.is_empty());
        for probe in &est.trace {
            if probe.lambda <= est.lo {
                assert_eq!(probe.status, IterationStatus::Converged, "at {}", probe.lambda);
            }
            if probe.lambda >= est.hi {
                assert_eq!(probe.status, IterationStatus::Diverged, "at {}", probe.lambda);
            }
        }
        let csv = est.trace_csv();
        assert!(csv.starts_with("lambda,status,iterations,final_sup\n"));
        assert_eq!(csv.lines().count(), est.trace.len() + 1);
    }

    #[test]
    fn reversed_bracket_is_rejected() {
        let grid = mixed_grid(61);
        let err = estimate_lambda_star(&grid, (2.0, 1.0), 0.1, &SolverParams::default());
        assert!(matches!(err, Err(BranchError::BadInput(_))));
    }

    #[test]
    fn scan_tabulates_a_growing_minimal_branch() {
        let grid = mixed_grid(61);
        let params = SolverParams::default();
        let lt = lambda_tilde(&grid, &params);
        let lambdas: Vec<f64> = [0.2, 0.4, 0.6].iter().map(|c| c * lt).collect();
        let table = bifurcation_scan(
            &grid,
            &lambdas,
            false,
            lt,
            &params,
            &MpParams::default(),
        )
        .unwrap();
        assert_eq!(table.rows.len(), 3);
        let mut prev = 0.0;
        for row in &table.rows {
            assert_eq!(row.min_status, IterationStatus::Converged);
            let sup = row.min_sup.unwrap();
            assert!(sup > prev, "minimal branch must grow: {sup} after {prev}");
            prev = sup;
            assert!(row.min_energy.unwrap().is_finite());
            assert!(row.sec_status.is_none() && row.sec_sup.is_none() && row.sec_level.is_none());
        }
        let csv = table.to_csv();
        assert!(csv.starts_with("lambda,min_sup,min_energy,sec_sup,sec_level,sec_status\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,"), "second-branch cells must be empty");
    }

    #[test]
    fn scan_attaches_a_second_branch_outcome() {
        let grid = mixed_grid(101);
        let params = SolverParams::default();
        let lt = lambda_tilde(&grid, &params);
        let table = bifurcation_scan(
            &grid,
            &[0.5 * lt],
            true,
            lt,
            &params,
            &MpParams::default(),
        )
        .unwrap();
        let row = &table.rows[0];
        assert_eq!(row.min_status, IterationStatus::Converged);
        let status = row.sec_status.unwrap_or_else(|| {
            panic!("second branch must have run, note: {:?}", row.note)
        });
        assert!(row.sec_level.is_some());
        if status == MpStatus::Found {
            let (min_sup, sec_sup) = (row.min_sup.unwrap(), row.sec_sup.unwrap());
            assert!(
                (sec_sup - min_sup).abs() > 1e-2 * min_sup,
                "second solution must be distinct: {sec_sup} vs {min_sup}"
            );
        }
    }

    #[test]
    fn couplings_at_or_above_the_certified_end_are_rejected() {
        let grid = mixed_grid(61);
        let err = bifurcation_scan(
            &grid,
            &[1.0, 2.0],
            false,
            2.0,
            &SolverParams::default(),
            &MpParams::default(),
        );
        assert!(matches!(err, Err(BranchError::BadInput(_))));
    }

    #[test]
    fn verify_battery_passes_on_the_reference_grid() {
        let grid = mixed_grid(101);
        let report =
            verify_suite(&grid, &VerifyOptions::default(), &SolverParams::default()).unwrap();
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        assert!(report.all_passed, "failing checks: {failed:#?}");
        assert_eq!(report.checks.len(), 15);
    }

    #[test]
    fn fault_injection_trips_the_jacobian_check() {
        let grid = mixed_grid(101);
        let opts = VerifyOptions { fault_p_weight_scale: Some(1.2), ..VerifyOptions::default() };
        let report = verify_suite(&grid, &opts, &SolverParams::default()).unwrap();
        assert!(!report.all_passed);
        let jac = report
            .checks
            .iter()
            .find(|c| c.name == "jacobian-consistency")
            .expect("battery always contains the Jacobian check");
        assert!(!jac.passed);
        assert!(jac.margin > 1e-2, "fault must be loud, margin {}", jac.margin);
    }
}
