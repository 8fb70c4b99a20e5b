//! Command-line front end.
//!
//! Exit codes: 0 success, 1 error, 2 solver stopped at `max_iters`,
//! 3 instance too large for the exact oracle, 4 a check exceeded its
//! tolerance.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::io::{read_density_2d, read_instance, write_grid_csv};
use crate::measures::{build_cdf, marginals_2d, w2_squared_1d, DiscreteDensity2D, Grid1D};
use crate::optimizer::{solve, CouplingDensity, SolveConfig, SolveReport, Termination};
use crate::oracle::{comonotone_plan_1d, solve_full_2d, solve_lp, Atoms};
use crate::reduction::{coupling_cost, pushforward_check, pushforward_check_h, TransportMapPair};
use crate::variational::lemmas::{
    default_eps_sequence, lemma1_checker, lemma2_checker, Lemma2Schedule,
};
use crate::variational::ReducedProblem;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITERS: i32 = 2;
pub const EXIT_SIZE_LIMIT: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Version of the JSON reports.
pub const SCHEMA: u32 = 1;

const W2_QUADRATURE: usize = 10_000;
const LEMMA_TOL: f64 = 1e-4;
const ORDER_TOL: f64 = 0.3;

#[derive(Debug, Parser)]
#[command(
    name = "planar-mk",
    version,
    about = "Planar optimal transport by reduction to a coupling of (X1, Y2)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimise L and write p*, the maps g and h, and report.json.
    Solve(SolveArgs),
    /// Exact LP optimum for an instance file or a density pair.
    Oracle(OracleArgs),
    /// Stationarity residual at a given coupling or at the solver output.
    CheckEl(CheckElArgs),
    /// Limit checks of the square-average and rectangle-bump lemmas.
    CheckLemmas(CommonArgs),
    /// Compare min L against the exact planar LP.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Density of X, JSON or CSV grid.
    #[arg(long)]
    input_f: PathBuf,
    /// Density of Y, JSON or CSV grid.
    #[arg(long)]
    input_g: PathBuf,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Optimizer configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the random starts; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Transport instance JSON `{supply, demand, cost}`.
    #[arg(long, conflicts_with_all = ["input_f", "input_g"])]
    instance: Option<PathBuf>,
    #[arg(long, requires = "input_g")]
    input_f: Option<PathBuf>,
    #[arg(long, requires = "input_f")]
    input_g: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CheckElArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Coupling density to check; the solver output is used when absent.
    #[arg(long)]
    coupling: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Largest accepted |min L - LP optimum|.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[command(flatten)]
    common: CommonArgs,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::CheckEl(a) => cmd_check_el(&a),
        Command::CheckLemmas(a) => cmd_check_lemmas(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::SizeLimit { .. } => EXIT_SIZE_LIMIT,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn load_inputs(a: &InputArgs) -> Result<(DiscreteDensity2D, DiscreteDensity2D)> {
    Ok((read_density_2d(&a.input_f)?, read_density_2d(&a.input_g)?))
}

fn load_config(a: &SolverArgs) -> Result<SolveConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SolveConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(a: &CommonArgs) -> Result<&Path> {
    fs::create_dir_all(&a.out_dir)?;
    Ok(&a.out_dir)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

/// Sum over both axes of the 1D transport costs between the marginals of
/// `f` and `f_tilde`, with interpolated quantiles and with cell-centre atoms.
fn per_axis_bounds(f: &DiscreteDensity2D, ft: &DiscreteDensity2D) -> Result<Value> {
    let (fx, fy) = marginals_2d(f);
    let (tx, ty) = marginals_2d(ft);
    let w2x = w2_squared_1d(&build_cdf(&fx), &build_cdf(&tx), W2_QUADRATURE)?;
    let w2y = w2_squared_1d(&build_cdf(&fy), &build_cdf(&ty), W2_QUADRATURE)?;
    let atoms = |d: &crate::measures::DiscreteDensity1D| Atoms::new(d.grid().centers(), d.masses());
    let ax = comonotone_plan_1d(&atoms(&fx)?, &atoms(&tx)?)?.objective;
    let ay = comonotone_plan_1d(&atoms(&fy)?, &atoms(&ty)?)?.objective;
    Ok(json!({
        "interpolated": {"x": w2x, "y": w2y, "sum": w2x + w2y},
        "atomic": {"x": ax, "y": ay, "sum": ax + ay},
    }))
}

fn solve_summary(r: &SolveReport) -> Result<Value> {
    let mut v = to_value(r)?;
    let obj = v.as_object_mut().expect("report serialises to an object");
    let (row, col) = r.final_marginal_errors;
    obj.remove("final_marginal_errors");
    obj.insert(
        "marginal_errors".into(),
        json!({"row": row, "col": col, "max_over_iterates": r.max_marginal_error}),
    );
    Ok(v)
}

fn write_maps(dir: &Path, p: &CouplingDensity, maps: &TransportMapPair) -> Result<()> {
    let d = p.density();
    let (gx, gy) = (d.grid_x(), d.grid_y());
    let pf = GridField::from_values(d.nx(), d.ny(), d.values().to_vec());
    write_grid_csv(&dir.join("p_star.csv"), gx, gy, &pf)?;
    write_grid_csv(&dir.join("g.csv"), gx, gy, &maps.g.centers)?;
    write_grid_csv(&dir.join("h.csv"), gx, gy, &maps.h.centers)?;
    Ok(())
}

fn exit_for(t: Termination) -> i32 {
    match t {
        Termination::MaxIters => EXIT_MAX_ITERS,
        _ => EXIT_OK,
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let (f, ft) = load_inputs(&a.inputs)?;
    let cfg = load_config(&a.solver)?;
    let dir = out_dir(&a.common)?;
    let start = Instant::now();
    let report = solve(&f, &ft, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    if cfg.multistart > 1 {
        eprintln!(
            "multistart: {:.0}% of {} starts within 1e-3 of the best{}",
            100.0 * report.multistart_agreement,
            cfg.multistart,
            if report.nonconvexity_flag {
                " (nonconvexity flagged)"
            } else {
                ""
            }
        );
    }
    let p = &report.p_star;
    let maps = TransportMapPair::build(&f, &ft, p)?;
    let cost = coupling_cost(&f, &ft, p, &maps.g, &maps.h)?;
    let bounds = per_axis_bounds(&f, &ft)?;
    let per_axis = bounds["interpolated"]["sum"].as_f64().unwrap_or(f64::NAN);
    write_maps(dir, p, &maps)?;
    let doc = json!({
        "schema": SCHEMA,
        "command": "solve",
        "config": to_value(&cfg)?,
        "grid": {"nx": p.density().nx(), "ny": p.density().ny()},
        "input_corrections": {"f": f.correction(), "f_tilde": ft.correction()},
        "solve": solve_summary(&report)?,
        "coupling_cost": to_value(&cost)?,
        "pushforward": {
            "g": to_value(&pushforward_check(&f, p, &maps.g))?,
            "h": to_value(&pushforward_check_h(&ft, p, &maps.h))?,
        },
        "per_axis_lower_bound": bounds,
        "relative_gap_to_per_axis": (report.l_exact - per_axis).abs() / per_axis.abs().max(f64::MIN_POSITIVE),
        "timing": {"solve_seconds": seconds},
    });
    write_json(&dir.join("report.json"), &doc)?;
    println!(
        "L_final = {:.12e} (exact {:.12e}), iterations {}, termination {:?}, EL residual {:.3e} -> {:.3e}",
        report.l_final,
        report.l_exact,
        report.iterations,
        report.termination,
        report.el_residual_initial,
        report.el_residual_final
    );
    println!("per-axis quantile sum = {per_axis:.12e}");
    Ok(exit_for(report.termination))
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32> {
    let dir = out_dir(&a.common)?;
    let doc = if let Some(path) = &a.instance {
        let inst = read_instance(path)?;
        let plan = solve_lp(&inst)?;
        println!("objective = {:.12e}", plan.objective);
        json!({"schema": SCHEMA, "command": "oracle", "objective": plan.objective, "flows": plan.flows})
    } else {
        let (Some(fp), Some(gp)) = (&a.input_f, &a.input_g) else {
            return Err(Error::Config(
                "oracle needs --instance or both --input-f and --input-g".into(),
            ));
        };
        let f = read_density_2d(fp)?;
        let ft = read_density_2d(gp)?;
        let full = solve_full_2d(&f, &ft)?;
        println!(
            "optimum = {:.12e} (x {:.6e}, y {:.6e})",
            full.cost, full.term_x, full.term_y
        );
        json!({
            "schema": SCHEMA,
            "command": "oracle",
            "objective": full.cost,
            "term_x": full.term_x,
            "term_y": full.term_y,
            "flows": full.plan.flows,
        })
    };
    write_json(&dir.join("oracle.json"), &doc)?;
    Ok(EXIT_OK)
}

/// Residual on the interior nodes written as cells between neighbouring
/// coupling-cell centres.
fn residual_grids(p: &CouplingDensity) -> Result<Option<(Grid1D, Grid1D)>> {
    let d = p.density();
    if d.nx() < 2 || d.ny() < 2 {
        return Ok(None);
    }
    Ok(Some((
        Grid1D::new(d.grid_x().centers())?,
        Grid1D::new(d.grid_y().centers())?,
    )))
}

fn cmd_check_el(a: &CheckElArgs) -> Result<i32> {
    let (f, ft) = load_inputs(&a.inputs)?;
    let cfg = load_config(&a.solver)?;
    let dir = out_dir(&a.common)?;
    let (f1, f2) = CouplingDensity::targets(&f, &ft);
    let (p, source, bridge) = match &a.coupling {
        Some(path) => {
            let d = read_density_2d(path)?;
            (
                CouplingDensity::new(d, f1.clone(), f2.clone())?,
                "file",
                0.0,
            )
        }
        None => (solve(&f, &ft, &cfg)?.p_star, "solver", cfg.bridge),
    };
    let problem = ReducedProblem::with_bridge(&f, &ft, bridge)?;
    let el = problem.euler_lagrange(&p)?;
    let el0 = problem.euler_lagrange(&CouplingDensity::independent(&f1, &f2))?;
    if let Some((gx, gy)) = residual_grids(&p)? {
        write_grid_csv(&dir.join("el_residual.csv"), &gx, &gy, &el.residual)?;
    }
    let boundary = el
        .cumulative
        .boundary_error(problem.row_mass(), problem.col_mass());
    let doc = json!({
        "schema": SCHEMA,
        "command": "check-el",
        "coupling": source,
        "bridge": bridge,
        "l_value": problem.evaluate(&p)?,
        "el_norm": el.interior_l2,
        "el_norm_independent": el0.interior_l2,
        "el_ratio": el.interior_l2 / el0.interior_l2.max(f64::MIN_POSITIVE),
        "el_max_abs": el.residual.max_abs(),
        "boundary_error": boundary,
    });
    write_json(&dir.join("el_report.json"), &doc)?;
    println!(
        "EL residual L2 = {:.6e} (independent coupling {:.6e}), boundary error {:.3e}",
        el.interior_l2, el0.interior_l2, boundary
    );
    Ok(EXIT_OK)
}

type Beta = fn(f64, f64) -> f64;

fn cmd_check_lemmas(a: &CommonArgs) -> Result<i32> {
    let dir = out_dir(a)?;
    let lemma1: [(&str, Beta, f64, f64); 3] = [
        ("1", |_, _| 1.0, 0.0, 0.0),
        ("x+y", |x, y| x + y, 0.0, 0.0),
        ("sin(x)cos(y)", |x, y| x.sin() * y.cos(), 0.3, 0.7),
    ];
    let lemma2: [(&str, Beta, f64, f64, f64); 3] = [
        ("xy", |x, y| x * y, 0.3, 0.6, 1.0),
        ("x^2y^2", |x, y| x * x * y * y, 0.5, 0.5, 1.0),
        (
            "exp(x+2y)",
            |x, y| (x + 2.0 * y).exp(),
            0.2,
            0.1,
            2.0 * 0.4_f64.exp(),
        ),
    ];
    let mut ok = true;
    let mut rows = Vec::new();
    for (name, beta, x, y) in lemma1 {
        let r = lemma1_checker(&beta, x, y, &default_eps_sequence());
        let pass = (r.limit - beta(x, y)).abs() <= LEMMA_TOL && r.order_ok(ORDER_TOL);
        ok &= pass;
        println!(
            "lemma1 {name:>14}: limit {:.10} target {:.10} order {:?} {}",
            r.limit,
            beta(x, y),
            r.observed_order,
            if pass { "PASS" } else { "FAIL" }
        );
        rows.push(json!({"lemma": 1, "beta": name, "a": x, "b": y, "expected": beta(x, y), "pass": pass, "report": to_value(&r)?}));
    }
    for (name, beta, x, y, exact) in lemma2 {
        let r = lemma2_checker(&beta, x, y, &Lemma2Schedule::default());
        let pass = (r.limit - exact).abs() <= LEMMA_TOL && r.order_ok(ORDER_TOL);
        ok &= pass;
        println!(
            "lemma2 {name:>14}: limit {:.10} target {:.10} order {:?} {}",
            r.limit,
            exact,
            r.observed_order,
            if pass { "PASS" } else { "FAIL" }
        );
        rows.push(json!({"lemma": 2, "beta": name, "a": x, "b": y, "expected": exact, "pass": pass, "report": to_value(&r)?}));
    }
    write_json(
        &dir.join("lemmas.json"),
        &json!({"schema": SCHEMA, "command": "check-lemmas", "checks": rows}),
    )?;
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    let (f, ft) = load_inputs(&a.inputs)?;
    let cfg = load_config(&a.solver)?;
    let dir = out_dir(&a.common)?;
    let full = solve_full_2d(&f, &ft)?;
    let start = Instant::now();
    let report = solve(&f, &ft, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let gap = (report.l_exact - full.cost).abs();
    let pass = gap <= a.tolerance;
    let doc = json!({
        "schema": SCHEMA,
        "command": "compare",
        "l_star": report.l_exact,
        "l_star_surrogate": report.l_final,
        "oracle_optimum": full.cost,
        "gap": gap,
        "tolerance": a.tolerance,
        "pass": pass,
        "el_residual": report.el_residual_final,
        "termination": to_value(&report.termination)?,
        "timing": {"solve_seconds": seconds},
    });
    write_json(&dir.join("compare.json"), &doc)?;
    fs::write(
        dir.join("compare.csv"),
        format!(
            "l_star,oracle_optimum,gap,el_residual\n{},{},{},{}\n",
            report.l_exact, full.cost, gap, report.el_residual_final
        ),
    )?;
    println!(
        "L(p*) = {:.12e}, oracle = {:.12e}, gap = {:.3e} ({})",
        report.l_exact,
        full.cost,
        gap,
        if pass {
            "within tolerance"
        } else {
            "exceeds tolerance"
        }
    );
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}
