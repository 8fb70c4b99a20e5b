//! Minimisation of `L` over the transportation polytope.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::measures::{marginals_2d, DiscreteDensity1D, DiscreteDensity2D, Grid1D, DENSITY_FLOOR};
use crate::variational::{marginal_errors, ReducedProblem};

/// L1 tolerance on each marginal for membership in the polytope.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const IPFP_TOL: f64 = 1e-13;
const IPFP_MAX_ITERS: usize = 100_000;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
const STEP_GROWTH: f64 = 4.0;
const MAX_EXPONENT: f64 = 30.0;
const AGREEMENT_TOL: f64 = 1e-3;

/// Joint density of `(X1, Y2)` with fixed marginals `f1`, `f2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingDensity {
    density: DiscreteDensity2D,
    row_target: DiscreteDensity1D,
    col_target: DiscreteDensity1D,
}

impl CouplingDensity {
    /// Wraps `density`, checking its grids and both marginals.
    pub fn new(
        density: DiscreteDensity2D,
        row_target: DiscreteDensity1D,
        col_target: DiscreteDensity1D,
    ) -> Result<Self> {
        if !density.grid_x().approx_eq(row_target.grid(), 1e-12)
            || !density.grid_y().approx_eq(col_target.grid(), 1e-12)
        {
            return Err(Error::GridMismatch(
                "coupling grids must match the target marginal grids".into(),
            ));
        }
        let out = Self {
            density,
            row_target,
            col_target,
        };
        let (row_error, col_error) = out.marginal_errors();
        if row_error >= FEASIBILITY_TOL || col_error >= FEASIBILITY_TOL {
            return Err(Error::Infeasible {
                row_error,
                col_error,
            });
        }
        Ok(out)
    }

    /// Coupling from row-major cell masses on the grids of the targets.
    pub fn from_masses(
        masses: &[f64],
        row_target: &DiscreteDensity1D,
        col_target: &DiscreteDensity1D,
    ) -> Result<Self> {
        let density = DiscreteDensity2D::from_masses(
            row_target.grid().clone(),
            col_target.grid().clone(),
            masses,
        )?;
        Self::new(density, row_target.clone(), col_target.clone())
    }

    /// `f1 (x) f2`.
    pub fn independent(row_target: &DiscreteDensity1D, col_target: &DiscreteDensity1D) -> Self {
        Self {
            density: DiscreteDensity2D::product(row_target, col_target),
            row_target: row_target.clone(),
            col_target: col_target.clone(),
        }
    }

    /// The targets of the reduced problem: x-marginal of `f` and
    /// y-marginal of `f_tilde`.
    pub fn targets(
        f: &DiscreteDensity2D,
        f_tilde: &DiscreteDensity2D,
    ) -> (DiscreteDensity1D, DiscreteDensity1D) {
        (marginals_2d(f).0, marginals_2d(f_tilde).1)
    }

    pub fn density(&self) -> &DiscreteDensity2D {
        &self.density
    }

    pub fn row_target(&self) -> &DiscreteDensity1D {
        &self.row_target
    }

    pub fn col_target(&self) -> &DiscreteDensity1D {
        &self.col_target
    }

    pub fn masses(&self) -> Vec<f64> {
        self.density.masses()
    }

    /// L1 errors of the row and column marginals.
    pub fn marginal_errors(&self) -> (f64, f64) {
        marginal_errors(
            &self.density.masses(),
            &self.row_target.masses(),
            &self.col_target.masses(),
        )
    }

    /// `H` at the grid nodes.
    pub fn cumulative(&self) -> crate::variational::CumulativeH {
        crate::variational::CumulativeH::from_masses(
            &self.masses(),
            self.density.nx(),
            self.density.ny(),
        )
    }
}

/// Rescales rows and columns of `m` in place until both marginal L1 errors
/// fall below `tol`. Returns the number of sweeps.
pub(crate) fn ipfp_masses(
    m: &mut [f64],
    rows: &[f64],
    cols: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<usize> {
    let (nx, ny) = (rows.len(), cols.len());
    let mut col_sum = vec![0.0; ny];
    let mut residual = f64::INFINITY;
    for it in 0..max_iters {
        let (row_error, col_error) = marginal_errors(m, rows, cols);
        residual = row_error.max(col_error);
        if residual < tol {
            return Ok(it);
        }
        for i in 0..nx {
            let row = &mut m[i * ny..(i + 1) * ny];
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(Error::InvalidDensity(format!(
                    "row {i} of the raw grid has no mass"
                )));
            }
            let k = rows[i] / s;
            row.iter_mut().for_each(|v| *v *= k);
        }
        col_sum.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..nx {
            for (c, v) in col_sum.iter_mut().zip(&m[i * ny..(i + 1) * ny]) {
                *c += v;
            }
        }
        if let Some(j) = col_sum.iter().position(|c| !(*c > 0.0)) {
            return Err(Error::InvalidDensity(format!(
                "column {j} of the raw grid has no mass"
            )));
        }
        for i in 0..nx {
            for ((v, c), t) in m[i * ny..(i + 1) * ny].iter_mut().zip(&col_sum).zip(cols) {
                *v *= t / c;
            }
        }
    }
    Err(Error::IpfpNotConverged {
        iterations: max_iters,
        residual,
    })
}

/// Projects a nonnegative density grid onto the couplings of `f1` and `f2`
/// by iterative proportional fitting.
pub fn ipfp_project(
    raw: &GridField,
    f1: &DiscreteDensity1D,
    f2: &DiscreteDensity1D,
    max_iters: usize,
    tol: f64,
) -> Result<CouplingDensity> {
    let (gx, gy) = (f1.grid(), f2.grid());
    if raw.nx != gx.cells() || raw.ny != gy.cells() {
        return Err(Error::GridMismatch(format!(
            "raw grid is {}x{}, marginals need {}x{}",
            raw.nx,
            raw.ny,
            gx.cells(),
            gy.cells()
        )));
    }
    if raw.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidDensity(
            "raw grid must be finite and nonnegative".into(),
        ));
    }
    let (wx, wy) = (gx.widths(), gy.widths());
    let mut m: Vec<f64> = raw
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| v * wx[k / raw.ny] * wy[k % raw.ny])
        .collect();
    ipfp_masses(&mut m, &f1.masses(), &f2.masses(), max_iters, tol)?;
    let density = DiscreteDensity2D::from_masses(gx.clone(), gy.clone(), &m)?;
    Ok(CouplingDensity {
        density,
        row_target: f1.clone(),
        col_target: f2.clone(),
    })
}

/// Mass perturbation `+1` on `(a, b)` and `(a1, b1)`, `-1` on `(a1, b)` and
/// `(a, b1)`; every row and column sums to zero.
pub fn feasible_direction(
    nx: usize,
    ny: usize,
    a: usize,
    a1: usize,
    b: usize,
    b1: usize,
) -> Result<GridField> {
    for (index, len) in [(a, nx), (a1, nx), (b, ny), (b1, ny)] {
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
    }
    if a == a1 || b == b1 {
        return Err(Error::DegenerateRectangle { a, a1, b, b1 });
    }
    let mut d = GridField::zeros(nx, ny);
    d.set(a, b, 1.0);
    d.set(a1, b1, 1.0);
    d.set(a1, b, -1.0);
    d.set(a, b1, -1.0);
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `f1 (x) f2`.
    #[default]
    Independent,
    /// IPFP projection of a random positive perturbation of `f1 (x) f2`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Entropic mirror steps along the gradient, re-projected by IPFP.
    #[default]
    ProjectedGradient,
    /// Cyclic exact line search along every rectangle direction.
    RectangleCd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub init: Init,
    pub scheme: Scheme,
    /// Stationarity tolerance; `None` means `1e-6 * nx * ny`.
    pub grad_tol: Option<f64>,
    pub max_iters: usize,
    pub multistart: usize,
    pub seed: u64,
    /// Relative ramp width smoothing the target quantiles during descent.
    pub bridge: f64,
    pub l_change_tol: f64,
    /// Density floor kept by every iterate.
    pub floor: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            init: Init::Independent,
            scheme: Scheme::ProjectedGradient,
            grad_tol: None,
            max_iters: 10_000,
            multistart: 1,
            seed: 0,
            bridge: 1e-3,
            l_change_tol: 1e-12,
            floor: DENSITY_FLOOR,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multistart == 0 {
            return Err(Error::Config("multistart must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bridge) {
            return Err(Error::Config("bridge must lie in [0, 1]".into()));
        }
        if let Some(t) = self.grad_tol {
            if !(t >= 0.0) {
                return Err(Error::Config("grad_tol must be nonnegative".into()));
            }
        }
        if !(self.l_change_tol >= 0.0) || !(self.floor >= 0.0) {
            return Err(Error::Config(
                "tolerances and floor must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    LChange,
    MaxIters,
}

/// Outcome of one start of a multistart solve.
#[derive(Debug, Clone, Serialize)]
pub struct StartSummary {
    pub index: usize,
    pub l_final: f64,
    pub l_exact: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub p_star: CouplingDensity,
    /// Objective (with the configured bridge) before the first step and
    /// after every accepted step.
    pub l_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub l_final: f64,
    /// `L(p_star)` of the exact, unbridged problem.
    pub l_exact: f64,
    pub el_residual_initial: f64,
    pub el_residual_final: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub grad_tol: f64,
    /// Largest marginal L1 error seen over all iterates of the chosen start.
    pub max_marginal_error: f64,
    pub final_marginal_errors: (f64, f64),
    pub starts: Vec<StartSummary>,
    pub best_start: usize,
    /// Fraction of starts whose `l_exact` is within `1e-3` of the best.
    pub multistart_agreement: f64,
    pub nonconvexity_flag: bool,
}

struct Run {
    masses: Vec<f64>,
    l_trace: Vec<f64>,
    grad_norm_trace: Vec<f64>,
    iterations: usize,
    termination: Termination,
    max_marginal_error: f64,
}

/// Stationarity measure: P-weighted RMS of the gradient after removing its
/// best P-weighted fit `alpha_i + beta_j`, which is what survives on the
/// support once the marginal constraints are accounted for.
pub(crate) fn stationarity(masses: &[f64], grad: &[f64], nx: usize, ny: usize) -> f64 {
    let rows: Vec<f64> = (0..nx)
        .map(|i| masses[i * ny..(i + 1) * ny].iter().sum())
        .collect();
    let mut cols = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            cols[j] += masses[i * ny + j];
        }
    }
    let mut alpha = vec![0.0; nx];
    let mut beta = vec![0.0; ny];
    for _ in 0..200 {
        let mut change: f64 = 0.0;
        for i in 0..nx {
            let s: f64 = (0..ny)
                .map(|j| masses[i * ny + j] * (grad[i * ny + j] - beta[j]))
                .sum();
            let v = if rows[i] > 0.0 { s / rows[i] } else { 0.0 };
            change = change.max((v - alpha[i]).abs());
            alpha[i] = v;
        }
        for j in 0..ny {
            let s: f64 = (0..nx)
                .map(|i| masses[i * ny + j] * (grad[i * ny + j] - alpha[i]))
                .sum();
            let v = if cols[j] > 0.0 { s / cols[j] } else { 0.0 };
            change = change.max((v - beta[j]).abs());
            beta[j] = v;
        }
        if change < 1e-16 {
            break;
        }
    }
    let mut acc = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let r = grad[i * ny + j] - alpha[i] - beta[j];
            acc += masses[i * ny + j] * r * r;
        }
    }
    acc.sqrt()
}

/// Subtracts row means and then column means.
fn double_center(g: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = g.to_vec();
    for i in 0..nx {
        let row = &mut out[i * ny..(i + 1) * ny];
        let mean = row.iter().sum::<f64>() / ny as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    for j in 0..ny {
        let mean = (0..nx).map(|i| out[i * ny + j]).sum::<f64>() / nx as f64;
        for i in 0..nx {
            out[i * ny + j] -= mean;
        }
    }
    out
}

struct Context<'a> {
    problem: &'a ReducedProblem,
    rows: Vec<f64>,
    cols: Vec<f64>,
    floor_mass: Vec<f64>,
    grad_tol: f64,
    cfg: &'a SolveConfig,
}

impl Context<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    fn track(&self, m: &[f64], worst: &mut f64) {
        let (r, c) = marginal_errors(m, &self.rows, &self.cols);
        *worst = worst.max(r).max(c);
    }
}

fn projected_gradient(ctx: &Context, start: Vec<f64>) -> Result<Run> {
    let (nx, ny) = ctx.shape();
    let mut m = start;
    let mut grad = vec![0.0; nx * ny];
    let mut l = ctx.problem.value_grad_masses(&m, &mut grad);
    let mut worst = 0.0;
    ctx.track(&m, &mut worst);
    let mut l_trace = vec![l];
    let mut grad_norm_trace = vec![stationarity(&m, &grad, nx, ny)];
    let mut step: Option<f64> = None;
    let mut cand_grad = vec![0.0; nx * ny];
    let mut iterations = 0;
    let mut termination = Termination::MaxIters;

    while iterations < ctx.cfg.max_iters {
        if *grad_norm_trace.last().unwrap() < ctx.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        let gc = double_center(&grad, nx, ny);
        let gmax = gc.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if gmax == 0.0 {
            termination = Termination::GradTol;
            break;
        }
        let cap = MAX_EXPONENT / gmax;
        let mut s = step.map_or(1.0 / gmax, |s| (s * STEP_GROWTH).min(cap));
        let mut accepted = None;
        let mut last_slope = 0.0;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand: Vec<f64> = m
                .iter()
                .zip(&gc)
                .zip(&ctx.floor_mass)
                .map(|((p, g), fl)| (p * (-s * g).exp()).max(*fl))
                .collect();
            if ipfp_masses(&mut cand, &ctx.rows, &ctx.cols, IPFP_MAX_ITERS, IPFP_TOL).is_ok() {
                let slope: f64 = grad
                    .iter()
                    .zip(cand.iter().zip(&m))
                    .map(|(g, (c, p))| g * (c - p))
                    .sum();
                last_slope = slope;
                let lc = ctx.problem.value_grad_masses(&cand, &mut cand_grad);
                if slope < 0.0 && lc <= l + ARMIJO_C * slope {
                    accepted = Some((cand, lc));
                    break;
                }
            }
            s *= BACKTRACK;
        }
        let Some((cand, lc)) = accepted else {
            if iterations == 0 {
                return Err(Error::NoDescent { slope: last_slope });
            }
            termination = Termination::LChange;
            break;
        };
        iterations += 1;
        step = Some(s);
        let decrease = l - lc;
        m = cand;
        l = lc;
        std::mem::swap(&mut grad, &mut cand_grad);
        ctx.track(&m, &mut worst);
        l_trace.push(l);
        grad_norm_trace.push(stationarity(&m, &grad, nx, ny));
        if decrease < ctx.cfg.l_change_tol {
            termination = Termination::LChange;
            break;
        }
    }
    if termination == Termination::MaxIters && *grad_norm_trace.last().unwrap() < ctx.grad_tol {
        termination = Termination::GradTol;
    }
    Ok(Run {
        masses: m,
        l_trace,
        grad_norm_trace,
        iterations,
        termination,
        max_marginal_error: worst,
    })
}

/// Exact line search of `L` along one rectangle direction; returns the
/// decrease achieved.
fn rectangle_move(
    problem: &ReducedProblem,
    m: &mut [f64],
    floor_mass: &[f64],
    (a, a1, b, b1): (usize, usize, usize, usize),
    bufs: &mut RectBuffers,
) -> f64 {
    let ny = problem.ny();
    let cells = [a * ny + b, a1 * ny + b1, a1 * ny + b, a * ny + b1];
    let sign = [1.0, 1.0, -1.0, -1.0];
    let orig = cells.map(|k| m[k]);
    let t_lo = (0..2)
        .map(|k| floor_mass[cells[k]] - orig[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let t_hi = (2..4)
        .map(|k| orig[k] - floor_mass[cells[k]])
        .fold(f64::INFINITY, f64::min);

    let set = |m: &mut [f64], t: f64| {
        for k in 0..4 {
            m[cells[k]] = orig[k] + sign[k] * t;
        }
    };
    let slope_at = |m: &mut [f64], t: f64, bufs: &mut RectBuffers| {
        set(m, t);
        problem.row_gradient(m, a, &mut bufs.row_a);
        problem.row_gradient(m, a1, &mut bufs.row_a1);
        problem.col_gradient(m, b, &mut bufs.col, &mut bufs.col_b);
        problem.col_gradient(m, b1, &mut bufs.col, &mut bufs.col_b1);
        (bufs.row_a[b] + bufs.col_b[a]) + (bufs.row_a1[b1] + bufs.col_b1[a1])
            - (bufs.row_a1[b] + bufs.col_b[a1])
            - (bufs.row_a[b1] + bufs.col_b1[a])
    };
    let local_cost = |m: &mut [f64], t: f64, col: &mut [f64]| {
        set(m, t);
        problem.row_cost(m, a)
            + problem.row_cost(m, a1)
            + problem.col_cost(m, b, col)
            + problem.col_cost(m, b1, col)
    };

    let d0 = slope_at(m, 0.0, bufs);
    let bound = if d0 < 0.0 { t_hi } else { t_lo };
    if d0 == 0.0 || bound * d0 >= 0.0 {
        set(m, 0.0);
        return 0.0;
    }
    let t_star = if slope_at(m, bound, bufs) * d0 > 0.0 {
        bound
    } else {
        let (mut lo, mut hi) = (0.0, bound);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if slope_at(m, mid, bufs) * d0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let before = local_cost(m, 0.0, &mut bufs.col);
    let after = local_cost(m, t_star, &mut bufs.col);
    if after < before {
        before - after
    } else {
        set(m, 0.0);
        0.0
    }
}

struct RectBuffers {
    row_a: Vec<f64>,
    row_a1: Vec<f64>,
    col: Vec<f64>,
    col_b: Vec<f64>,
    col_b1: Vec<f64>,
}

fn rectangle_cd(ctx: &Context, start: Vec<f64>) -> Result<Run> {
    let (nx, ny) = ctx.shape();
    let problem = ctx.problem;
    let mut m = start;
    let mut grad = vec![0.0; nx * ny];
    let mut l = problem.value_grad_masses(&m, &mut grad);
    let mut worst = 0.0;
    ctx.track(&m, &mut worst);
    let mut l_trace = vec![l];
    let mut grad_norm_trace = vec![stationarity(&m, &grad, nx, ny)];
    let mut bufs = RectBuffers {
        row_a: vec![0.0; ny],
        row_a1: vec![0.0; ny],
        col: vec![0.0; nx],
        col_b: vec![0.0; nx],
        col_b1: vec![0.0; nx],
    };
    let mut iterations = 0;
    let mut termination = Termination::MaxIters;
    while iterations < ctx.cfg.max_iters {
        if *grad_norm_trace.last().unwrap() < ctx.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        for a in 0..nx {
            for a1 in a + 1..nx {
                for b in 0..ny {
                    for b1 in b + 1..ny {
                        rectangle_move(problem, &mut m, &ctx.floor_mass, (a, a1, b, b1), &mut bufs);
                    }
                }
            }
        }
        iterations += 1;
        let lc = problem.value_grad_masses(&m, &mut grad);
        let decrease = l - lc;
        l = lc.min(l);
        ctx.track(&m, &mut worst);
        l_trace.push(l);
        grad_norm_trace.push(stationarity(&m, &grad, nx, ny));
        if iterations == 1 && decrease <= 0.0 && grad_norm_trace[0] >= ctx.grad_tol {
            return Err(Error::NoDescent { slope: 0.0 });
        }
        if decrease < ctx.cfg.l_change_tol {
            termination = Termination::LChange;
            break;
        }
    }
    if termination == Termination::MaxIters && *grad_norm_trace.last().unwrap() < ctx.grad_tol {
        termination = Termination::GradTol;
    }
    Ok(Run {
        masses: m,
        l_trace,
        grad_norm_trace,
        iterations,
        termination,
        max_marginal_error: worst,
    })
}

/// Uniform double in `[0, 1)` from the top 53 bits of one output.
pub(crate) fn unit_f64(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Thread cap for multistart solves from `PLANAR_MK_THREADS`.
pub fn thread_cap() -> Option<usize> {
    std::env::var("PLANAR_MK_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn start_points(ctx: &Context, independent: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(ctx.cfg.seed);
    let mut starts = Vec::with_capacity(ctx.cfg.multistart);
    for k in 0..ctx.cfg.multistart {
        if k == 0 && ctx.cfg.init == Init::Independent {
            starts.push(independent.to_vec());
            continue;
        }
        let mut raw: Vec<f64> = independent
            .iter()
            .zip(&ctx.floor_mass)
            .map(|(p, fl)| (p * (0.5 + unit_f64(&mut rng))).max(*fl))
            .collect();
        ipfp_masses(&mut raw, &ctx.rows, &ctx.cols, IPFP_MAX_ITERS, IPFP_TOL)?;
        starts.push(raw);
    }
    Ok(starts)
}

/// Minimises `L` over couplings of `f1` (x-marginal of `f`) and `f2`
/// (y-marginal of `f_tilde`).
pub fn solve(
    f: &DiscreteDensity2D,
    f_tilde: &DiscreteDensity2D,
    config: &SolveConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let problem = ReducedProblem::with_bridge(f, f_tilde, config.bridge)?;
    let exact = ReducedProblem::new(f, f_tilde)?;
    let (f1, f2) = CouplingDensity::targets(f, f_tilde);
    let (nx, ny) = (problem.nx(), problem.ny());
    let grid_x: &Grid1D = f1.grid();
    let grid_y: &Grid1D = f2.grid();
    let floor_mass = (0..nx * ny)
        .map(|k| config.floor * grid_x.width(k / ny) * grid_y.width(k % ny))
        .collect();
    let ctx = Context {
        problem: &problem,
        rows: f1.masses(),
        cols: f2.masses(),
        floor_mass,
        grad_tol: config.grad_tol.unwrap_or(1e-6 * (nx * ny) as f64),
        cfg: config,
    };
    let independent = CouplingDensity::independent(&f1, &f2).masses();
    let starts = start_points(&ctx, &independent)?;

    let run_one = |m: &Vec<f64>| match config.scheme {
        Scheme::ProjectedGradient => projected_gradient(&ctx, m.clone()),
        Scheme::RectangleCd => rectangle_cd(&ctx, m.clone()),
    };
    let runs: Vec<Result<Run>> = if starts.len() > 1 {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_cap() {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| starts.par_iter().map(run_one).collect())
    } else {
        starts.iter().map(run_one).collect()
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let summaries: Vec<StartSummary> = runs
        .iter()
        .enumerate()
        .map(|(index, r)| StartSummary {
            index,
            l_final: *r.l_trace.last().unwrap(),
            l_exact: exact.value_masses(&r.masses),
            iterations: r.iterations,
            termination: r.termination,
        })
        .collect();
    let best = summaries.iter().fold(0, |b, s| {
        if s.l_exact < summaries[b].l_exact {
            s.index
        } else {
            b
        }
    });
    let best_l = summaries[best].l_exact;
    let agreeing = summaries
        .iter()
        .filter(|s| s.l_exact - best_l <= AGREEMENT_TOL)
        .count();
    let agreement = agreeing as f64 / summaries.len() as f64;

    let run = runs.into_iter().nth(best).expect("best start exists");
    let el_initial = problem.euler_lagrange_masses(&independent).interior_l2;
    let el_final = problem.euler_lagrange_masses(&run.masses).interior_l2;
    let final_marginal_errors = marginal_errors(&run.masses, &ctx.rows, &ctx.cols);
    let p_star = CouplingDensity::from_masses(&run.masses, &f1, &f2)?;
    Ok(SolveReport {
        p_star,
        l_final: *run.l_trace.last().unwrap(),
        l_exact: best_l,
        l_trace: run.l_trace,
        grad_norm_trace: run.grad_norm_trace,
        el_residual_initial: el_initial,
        el_residual_final: el_final,
        iterations: run.iterations,
        termination: run.termination,
        grad_tol: ctx.grad_tol,
        max_marginal_error: run.max_marginal_error,
        final_marginal_errors,
        starts: summaries,
        best_start: best,
        multistart_agreement: agreement,
        nonconvexity_flag: agreement < 0.8,
    })
}
