//! The reduced functional `L(p)` and its calculus.
//!
//! `p` is the joint density of `(X1, Y2)` on `grid_x(f) x grid_y(f_tilde)`.
//! Every grid density is read as atoms at its cell centres, so each slice
//! term of `L` is the comonotone (quantile) coupling cost between the
//! conditional law of the coupling and the conditional law of the target:
//!
//! ```text
//! L(p) = sum_x int (Y2 quantile - G(x, .))^2 + sum_y int (X1 quantile - G~(., y))^2
//! ```
//!
//! Gluing the slice couplings produces a coupling of `f` and `f_tilde`
//! with exactly this cost, so `min L` equals the discrete optimal transport
//! cost between the two atom sets.

pub mod lemmas;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::measures::DiscreteDensity2D;
use crate::optimizer::{CouplingDensity, FEASIBILITY_TOL};
use crate::slice::{slice_cost, slice_gradient, slice_upper_quantiles, SliceTarget};

/// Levels this close to a jump of a target quantile are read as sitting on
/// it.
const JUMP_TOL: f64 = 1e-12;

pub use lemmas::{lemma1_checker, lemma2_checker, Lemma2Schedule, LimitReport};

/// `f`, `f_tilde` and the precomputed conditional target laws.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    f: DiscreteDensity2D,
    f_tilde: DiscreteDensity2D,
    bridge: f64,
    x1: Vec<f64>,
    y2: Vec<f64>,
    row_targets: Vec<SliceTarget>,
    col_targets: Vec<SliceTarget>,
    row_mass: Vec<f64>,
    col_mass: Vec<f64>,
}

impl ReducedProblem {
    /// Exact (unbridged) problem.
    pub fn new(f: &DiscreteDensity2D, f_tilde: &DiscreteDensity2D) -> Result<Self> {
        Self::with_bridge(f, f_tilde, 0.0)
    }

    /// Problem whose target quantiles have ramps of relative width `bridge`
    /// between atoms; `bridge = 0` is the exact step quantile.
    pub fn with_bridge(
        f: &DiscreteDensity2D,
        f_tilde: &DiscreteDensity2D,
        bridge: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&bridge) {
            return Err(Error::Config(format!(
                "bridge must lie in [0, 1], got {bridge}"
            )));
        }
        let (nx, nfy) = (f.nx(), f.ny());
        let (ntx, ny) = (f_tilde.nx(), f_tilde.ny());
        let fm = f.masses();
        let tm = f_tilde.masses();

        let x2 = f.grid_y().centers();
        let y1 = f_tilde.grid_x().centers();
        let mut row_targets = Vec::with_capacity(nx);
        let mut row_mass = Vec::with_capacity(nx);
        for i in 0..nx {
            let slice = &fm[i * nfy..(i + 1) * nfy];
            let mass: f64 = slice.iter().sum();
            if !(mass > 0.0) {
                return Err(Error::DegenerateSlice { index: i, mass });
            }
            row_targets.push(SliceTarget::new(&x2, slice, bridge));
            row_mass.push(mass);
        }
        let mut col_targets = Vec::with_capacity(ny);
        let mut col_mass = Vec::with_capacity(ny);
        let mut buf = vec![0.0; ntx];
        for j in 0..ny {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = tm[i * ny + j];
            }
            let mass: f64 = buf.iter().sum();
            if !(mass > 0.0) {
                return Err(Error::DegenerateSlice { index: j, mass });
            }
            col_targets.push(SliceTarget::new(&y1, &buf, bridge));
            col_mass.push(mass);
        }
        Ok(Self {
            f: f.clone(),
            f_tilde: f_tilde.clone(),
            bridge,
            x1: f.grid_x().centers(),
            y2: f_tilde.grid_y().centers(),
            row_targets,
            col_targets,
            row_mass,
            col_mass,
        })
    }

    pub fn f(&self) -> &DiscreteDensity2D {
        &self.f
    }

    pub fn f_tilde(&self) -> &DiscreteDensity2D {
        &self.f_tilde
    }

    pub fn bridge(&self) -> f64 {
        self.bridge
    }

    pub fn nx(&self) -> usize {
        self.x1.len()
    }

    pub fn ny(&self) -> usize {
        self.y2.len()
    }

    /// Cell masses of `f1` (x-marginal of `f`).
    pub fn row_mass(&self) -> &[f64] {
        &self.row_mass
    }

    /// Cell masses of `f2` (y-marginal of `f_tilde`).
    pub fn col_mass(&self) -> &[f64] {
        &self.col_mass
    }

    /// Centres of the coupling grid.
    pub fn x1_centers(&self) -> &[f64] {
        &self.x1
    }

    pub fn y2_centers(&self) -> &[f64] {
        &self.y2
    }

    /// Checks grids and marginals of `p`; returns its row-major masses.
    pub fn check_coupling(&self, p: &CouplingDensity) -> Result<Vec<f64>> {
        let d = p.density();
        if !d.grid_x().approx_eq(self.f.grid_x(), 1e-12)
            || !d.grid_y().approx_eq(self.f_tilde.grid_y(), 1e-12)
        {
            return Err(Error::GridMismatch(
                "coupling must live on grid_x(f) x grid_y(f_tilde)".into(),
            ));
        }
        let m = d.masses();
        let (row_error, col_error) = self.marginal_errors(&m);
        if row_error >= FEASIBILITY_TOL || col_error >= FEASIBILITY_TOL {
            return Err(Error::Infeasible {
                row_error,
                col_error,
            });
        }
        Ok(m)
    }

    /// L1 errors of the row and column sums of `masses` against `f1`, `f2`.
    pub fn marginal_errors(&self, masses: &[f64]) -> (f64, f64) {
        marginal_errors(masses, &self.row_mass, &self.col_mass)
    }

    fn column(&self, masses: &[f64], j: usize, buf: &mut [f64]) {
        let ny = self.ny();
        for (i, b) in buf.iter_mut().enumerate() {
            *b = masses[i * ny + j];
        }
    }

    pub(crate) fn row_cost(&self, masses: &[f64], i: usize) -> f64 {
        let ny = self.ny();
        slice_cost(
            &self.y2,
            &masses[i * ny..(i + 1) * ny],
            &self.row_targets[i],
        )
    }

    pub(crate) fn col_cost(&self, masses: &[f64], j: usize, buf: &mut [f64]) -> f64 {
        self.column(masses, j, buf);
        slice_cost(&self.x1, buf, &self.col_targets[j])
    }

    pub(crate) fn row_gradient(&self, masses: &[f64], i: usize, out: &mut [f64]) {
        let ny = self.ny();
        slice_gradient(
            &self.y2,
            &masses[i * ny..(i + 1) * ny],
            &self.row_targets[i],
            out,
        );
    }

    pub(crate) fn col_gradient(&self, masses: &[f64], j: usize, buf: &mut [f64], out: &mut [f64]) {
        self.column(masses, j, buf);
        slice_gradient(&self.x1, buf, &self.col_targets[j], out);
    }

    /// `(term_y, term_x)`: the row-slice and column-slice parts of `L`.
    pub(crate) fn terms_masses(&self, masses: &[f64]) -> (f64, f64) {
        let mut buf = vec![0.0; self.nx()];
        let term_y = (0..self.nx()).map(|i| self.row_cost(masses, i)).sum();
        let term_x = (0..self.ny())
            .map(|j| self.col_cost(masses, j, &mut buf))
            .sum();
        (term_y, term_x)
    }

    pub(crate) fn value_masses(&self, masses: &[f64]) -> f64 {
        let (a, b) = self.terms_masses(masses);
        a + b
    }

    /// `(phi, psi)` as derivatives of `L` with respect to cell masses.
    pub(crate) fn variation_masses(&self, masses: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny) = (self.nx(), self.ny());
        let mut phi = vec![0.0; nx * ny];
        for i in 0..nx {
            self.row_gradient(masses, i, &mut phi[i * ny..(i + 1) * ny]);
        }
        let mut psi = vec![0.0; nx * ny];
        let mut buf = vec![0.0; nx];
        let mut out = vec![0.0; nx];
        for j in 0..ny {
            self.col_gradient(masses, j, &mut buf, &mut out);
            for i in 0..nx {
                psi[i * ny + j] = out[i];
            }
        }
        (phi, psi)
    }

    /// Value and gradient `phi + psi` in one pass.
    pub(crate) fn value_grad_masses(&self, masses: &[f64], grad: &mut [f64]) -> f64 {
        let (phi, psi) = self.variation_masses(masses);
        for ((g, a), b) in grad.iter_mut().zip(&phi).zip(&psi) {
            *g = a + b;
        }
        self.value_masses(masses)
    }

    /// `L(p)`.
    pub fn evaluate(&self, p: &CouplingDensity) -> Result<f64> {
        let m = self.check_coupling(p)?;
        Ok(self.value_masses(&m))
    }

    /// First-variation kernels: `dL(p + e eta)/de = sum (phi + psi) eta area`.
    pub fn first_variation(&self, p: &CouplingDensity) -> Result<(GridField, GridField)> {
        let m = self.check_coupling(p)?;
        let (phi, psi) = self.variation_masses(&m);
        let (nx, ny) = (self.nx(), self.ny());
        Ok((
            GridField::from_values(nx, ny, phi),
            GridField::from_values(nx, ny, psi),
        ))
    }

    /// Closed forms `phi_y = 2 (y - G(x, H_x / f1))` on the points between
    /// consecutive y-centres (shape `nx x (ny - 1)`) and
    /// `psi_x = 2 (x - G~(H_y / f2, y))` between x-centres (`(nx - 1) x ny`).
    #[allow(clippy::needless_range_loop)]
    pub fn cross_derivatives(&self, p: &CouplingDensity) -> Result<(GridField, GridField)> {
        let m = self.check_coupling(p)?;
        let (nx, ny) = (self.nx(), self.ny());
        let mut phi_y = GridField::zeros(nx, ny.saturating_sub(1));
        for i in 0..nx {
            let q = slice_upper_quantiles(&m[i * ny..(i + 1) * ny], &self.row_targets[i]);
            for b in 0..ny.saturating_sub(1) {
                let y = 0.5 * (self.y2[b] + self.y2[b + 1]);
                phi_y.set(i, b, 2.0 * (y - q[b]));
            }
        }
        let mut psi_x = GridField::zeros(nx.saturating_sub(1), ny);
        let mut buf = vec![0.0; nx];
        for j in 0..ny {
            self.column(&m, j, &mut buf);
            let q = slice_upper_quantiles(&buf, &self.col_targets[j]);
            for a in 0..nx.saturating_sub(1) {
                let x = 0.5 * (self.x1[a] + self.x1[a + 1]);
                psi_x.set(a, j, 2.0 * (x - q[a]));
            }
        }
        Ok((phi_y, psi_x))
    }

    pub(crate) fn euler_lagrange_masses(&self, masses: &[f64]) -> EulerLagrange {
        let (nx, ny) = (self.nx(), self.ny());
        let h = CumulativeH::from_masses(masses, nx, ny);
        // G(x_i, H_x / f1) at y-node b, from the centred x-difference of H
        let mut g_bracket = GridField::zeros(nx, ny + 1);
        for i in 0..nx {
            for b in 0..=ny {
                let level = h.get(i + 1, b) - h.get(i, b);
                g_bracket.set(i, b, self.row_targets[i].at_centered(level, JUMP_TOL));
            }
        }
        let mut h_bracket = GridField::zeros(nx + 1, ny);
        for j in 0..ny {
            for a in 0..=nx {
                let level = h.get(a, j + 1) - h.get(a, j);
                h_bracket.set(a, j, self.col_targets[j].at_centered(level, JUMP_TOL));
            }
        }
        let mut residual = GridField::zeros(nx.saturating_sub(1), ny.saturating_sub(1));
        let mut sq = 0.0;
        for a in 1..nx {
            let dx = self.x1[a] - self.x1[a - 1];
            for b in 1..ny {
                let dy = self.y2[b] - self.y2[b - 1];
                let gx = (g_bracket.get(a, b) - g_bracket.get(a - 1, b)) / dx;
                let hy = (h_bracket.get(a, b) - h_bracket.get(a, b - 1)) / dy;
                let r = gx + hy;
                residual.set(a - 1, b - 1, r);
                sq += r * r * dx * dy;
            }
        }
        EulerLagrange {
            cumulative: h,
            g_bracket,
            h_bracket,
            residual,
            interior_l2: sq.sqrt(),
        }
    }

    /// Divergence `d/dx G(x, H_x/f1) + d/dy G~(H_y/f2, y)` at the interior
    /// grid nodes. A bracket whose level lands on a jump of the target
    /// quantile takes the midpoint of the jump.
    pub fn euler_lagrange(&self, p: &CouplingDensity) -> Result<EulerLagrange> {
        let m = self.check_coupling(p)?;
        Ok(self.euler_lagrange_masses(&m))
    }

    pub fn state(&self, p: &CouplingDensity) -> Result<VariationalState> {
        let m = self.check_coupling(p)?;
        let (nx, ny) = (self.nx(), self.ny());
        let (phi, psi) = self.variation_masses(&m);
        let grad = phi.iter().zip(&psi).map(|(a, b)| a + b).collect();
        let el = self.euler_lagrange_masses(&m);
        Ok(VariationalState {
            l_value: self.value_masses(&m),
            phi: GridField::from_values(nx, ny, phi),
            psi: GridField::from_values(nx, ny, psi),
            grad: GridField::from_values(nx, ny, grad),
            el_residual: el.residual,
            el_norm: el.interior_l2,
        })
    }
}

pub(crate) fn marginal_errors(masses: &[f64], rows: &[f64], cols: &[f64]) -> (f64, f64) {
    let ny = cols.len();
    let mut col_sum = vec![0.0; ny];
    let mut row_error = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let slice = &masses[i * ny..(i + 1) * ny];
        let s: f64 = slice.iter().sum();
        row_error += (s - r).abs();
        for (c, v) in col_sum.iter_mut().zip(slice) {
            *c += v;
        }
    }
    let col_error = col_sum.iter().zip(cols).map(|(s, c)| (s - c).abs()).sum();
    (row_error, col_error)
}

/// `H(x, y)`: mass of `p` below and to the left of each grid node,
/// shape `(nx + 1) x (ny + 1)`.
#[derive(Debug, Clone, Serialize)]
pub struct CumulativeH {
    pub values: GridField,
}

impl CumulativeH {
    pub fn from_masses(masses: &[f64], nx: usize, ny: usize) -> Self {
        let mut values = GridField::zeros(nx + 1, ny + 1);
        for a in 1..=nx {
            let mut row = 0.0;
            for b in 1..=ny {
                row += masses[(a - 1) * ny + (b - 1)];
                let v = values.get(a - 1, b) + row;
                values.set(a, b, v);
            }
        }
        Self { values }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values.get(a, b)
    }

    /// Largest deviation of the edges from `H = 0` on the low edges and the
    /// cumulative marginals on the high edges.
    pub fn boundary_error(&self, row_mass: &[f64], col_mass: &[f64]) -> f64 {
        let (nx, ny) = (row_mass.len(), col_mass.len());
        let mut err: f64 = 0.0;
        for a in 0..=nx {
            err = err.max(self.get(a, 0).abs());
        }
        for b in 0..=ny {
            err = err.max(self.get(0, b).abs());
        }
        let mut acc = 0.0;
        for a in 1..=nx {
            acc += row_mass[a - 1];
            err = err.max((self.get(a, ny) - acc).abs());
        }
        acc = 0.0;
        for b in 1..=ny {
            acc += col_mass[b - 1];
            err = err.max((self.get(nx, b) - acc).abs());
        }
        err
    }
}

/// Euler–Lagrange diagnostics for one coupling.
#[derive(Debug, Clone, Serialize)]
pub struct EulerLagrange {
    pub cumulative: CumulativeH,
    /// `G(x_i, H_x/f1)` at `(centre i, y-node b)`.
    pub g_bracket: GridField,
    /// `G~(H_y/f2, y_j)` at `(x-node a, centre j)`.
    pub h_bracket: GridField,
    /// Divergence at interior nodes, `(nx - 1) x (ny - 1)`.
    pub residual: GridField,
    pub interior_l2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationalState {
    pub l_value: f64,
    pub phi: GridField,
    pub psi: GridField,
    pub grad: GridField,
    pub el_residual: GridField,
    pub el_norm: f64,
}

/// `L(p)` for the exact problem.
pub fn evaluate_l(
    f: &DiscreteDensity2D,
    f_tilde: &DiscreteDensity2D,
    p: &CouplingDensity,
) -> Result<f64> {
    ReducedProblem::new(f, f_tilde)?.evaluate(p)
}

pub fn first_variation(
    f: &DiscreteDensity2D,
    f_tilde: &DiscreteDensity2D,
    p: &CouplingDensity,
) -> Result<(GridField, GridField)> {
    ReducedProblem::new(f, f_tilde)?.first_variation(p)
}

pub fn simplified_cross_derivatives(
    f: &DiscreteDensity2D,
    f_tilde: &DiscreteDensity2D,
    p: &CouplingDensity,
) -> Result<(GridField, GridField)> {
    ReducedProblem::new(f, f_tilde)?.cross_derivatives(p)
}

pub fn euler_lagrange_residual(
    f: &DiscreteDensity2D,
    f_tilde: &DiscreteDensity2D,
    p: &CouplingDensity,
) -> Result<EulerLagrange> {
    ReducedProblem::new(f, f_tilde)?.euler_lagrange(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Grid1D;

    fn smooth(n: usize, phase: f64) -> DiscreteDensity2D {
        let g = Grid1D::uniform(0.0, 1.0, n).unwrap();
        DiscreteDensity2D::from_fn(g.clone(), g, |x, y| {
            1.0 + 0.4 * (6.0 * x + phase).sin() * y + x * y
        })
        .unwrap()
    }

    fn generic(n: usize) -> (DiscreteDensity2D, DiscreteDensity2D, CouplingDensity) {
        let f = smooth(n, 0.3);
        let ft = smooth(n, 2.0);
        let (f1, f2) = CouplingDensity::targets(&f, &ft);
        let c = Grid1D::uniform(0.0, 1.0, n).unwrap().centers();
        let raw: Vec<f64> = c
            .iter()
            .flat_map(|&x| {
                c.iter()
                    .map(move |&y| (1.3 + (5.0 * x - 3.0 * y).cos()) * f2_weight(y))
            })
            .collect();
        let p = crate::optimizer::ipfp_project(
            &GridField::from_values(n, n, raw),
            &f1,
            &f2,
            10_000,
            1e-14,
        )
        .unwrap();
        (f, ft, p)
    }

    fn f2_weight(y: f64) -> f64 {
        1.0 + y
    }

    fn area_grad(pr: &ReducedProblem, p: &CouplingDensity) -> Vec<f64> {
        let (phi, psi) = pr.first_variation(p).unwrap();
        phi.values
            .iter()
            .zip(&psi.values)
            .map(|(a, b)| a + b)
            .collect()
    }

    #[test]
    fn identical_inputs_have_zero_cost_at_f() {
        let f = smooth(7, 0.9);
        let pr = ReducedProblem::new(&f, &f).unwrap();
        let (f1, f2) = CouplingDensity::targets(&f, &f);
        let p = CouplingDensity::new(f.clone(), f1, f2).unwrap();
        assert!(pr.evaluate(&p).unwrap().abs() < 1e-14);
    }

    #[test]
    fn cost_is_positive_off_the_optimum() {
        let (f, ft, p) = generic(6);
        assert!(evaluate_l(&f, &ft, &p).unwrap() > 1e-4);
    }

    #[test]
    fn cumulative_matches_marginals_on_the_boundary() {
        let (f, ft, p) = generic(9);
        let pr = ReducedProblem::new(&f, &ft).unwrap();
        let h = p.cumulative();
        assert!(h.boundary_error(pr.row_mass(), pr.col_mass()) < 1e-12);
        assert!((h.get(9, 9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_derivatives_are_differences_of_the_variation() {
        let (f, ft, p) = generic(8);
        let (phi, psi) = first_variation(&f, &ft, &p).unwrap();
        let (phi_y, psi_x) = simplified_cross_derivatives(&f, &ft, &p).unwrap();
        let h = 1.0 / 8.0;
        for i in 0..8 {
            for b in 0..7 {
                assert!(((phi.get(i, b + 1) - phi.get(i, b)) / h - phi_y.get(i, b)).abs() < 1e-10);
                assert!(((psi.get(b + 1, i) - psi.get(b, i)) / h - psi_x.get(b, i)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn residual_is_the_rectangle_derivative() {
        for n in [5, 8] {
            let (f, ft, p) = generic(n);
            let pr = ReducedProblem::new(&f, &ft).unwrap();
            let grad = area_grad(&pr, &p);
            let el = euler_lagrange_residual(&f, &ft, &p).unwrap();
            let cell = 1.0 / (n * n) as f64;
            for a in 1..n {
                for b in 1..n {
                    let d = grad[(a - 1) * n + b - 1] + grad[a * n + b]
                        - grad[a * n + b - 1]
                        - grad[(a - 1) * n + b];
                    assert!(
                        (d + 2.0 * cell * el.residual.get(a - 1, b - 1)).abs() < 1e-10,
                        "{n} {a} {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn residual_vanishes_for_identical_inputs() {
        let f = smooth(6, 1.1);
        let (f1, f2) = CouplingDensity::targets(&f, &f);
        let p = CouplingDensity::new(f.clone(), f1, f2).unwrap();
        let el = euler_lagrange_residual(&f, &f, &p).unwrap();
        assert!(el.interior_l2 < 1e-12);
    }

    #[test]
    fn wrong_grid_is_rejected() {
        let f = smooth(4, 0.0);
        let g = smooth(5, 0.0);
        let (f1, f2) = CouplingDensity::targets(&g, &g);
        let p = CouplingDensity::independent(&f1, &f2);
        assert!(evaluate_l(&f, &f, &p).is_err());
    }
}
