//! Discrete densities on rectangular grids, their CDFs and quantiles.
//!
//! Densities are cell-centred and piecewise constant: `values[i]` is the
//! density on cell `i`, so its mass is `values[i] * width(i)`. A [`Cdf1D`] is
//! a nondecreasing piecewise-linear function through a list of knots;
//! repeated abscissae encode atoms (vertical jumps), which is how the
//! cell-centre atom laws used by the reduced functional are represented.

use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum density value after preprocessing.
pub const DENSITY_FLOOR: f64 = 1e-10;

/// Tolerance on the total mass of a normalised density.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Strictly increasing grid nodes; cell `i` is `[nodes[i], nodes[i + 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid1D {
    nodes: Vec<f64>,
}

impl Grid1D {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node".into()));
        }
        if let Some(w) = nodes.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "nodes not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { nodes })
    }

    /// `cells` equal cells covering `[min, max]`.
    pub fn uniform(min: f64, max: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidGrid("zero cells".into()));
        }
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::InvalidGrid(format!("bad extent [{min}, {max}]")));
        }
        let h = (max - min) / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|i| min + h * i as f64).collect();
        nodes[cells] = max;
        Self::new(nodes)
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn width(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.nodes[i] + self.nodes[i + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Index of the cell containing `x`; points outside the grid clamp to the
    /// edge cells.
    pub fn locate(&self, x: f64) -> usize {
        let k = self.nodes.partition_point(|&n| n <= x);
        k.saturating_sub(1).min(self.cells() - 1)
    }

    /// True when both grids have the same nodes up to `tol`.
    pub fn approx_eq(&self, other: &Grid1D, tol: f64) -> bool {
        self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

fn check_values(values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(Error::InvalidDensity(format!(
            "expected {expected} values, got {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidDensity(format!(
            "values must be finite and nonnegative, found {v}"
        )));
    }
    Ok(())
}

/// Nonnegative piecewise-constant density with unit mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDensity1D {
    grid: Grid1D,
    values: Vec<f64>,
    /// Factor applied to the raw values to reach unit mass.
    correction: f64,
}

impl DiscreteDensity1D {
    /// Builds a density from raw values, rescaling to unit mass.
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        check_values(&values, grid.cells())?;
        let mass: f64 = values.iter().zip(grid.widths()).map(|(v, w)| v * w).sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidDensity("total mass is zero".into()));
        }
        let correction = 1.0 / mass;
        let values = values.into_iter().map(|v| v * correction).collect();
        Ok(Self {
            grid,
            values,
            correction,
        })
    }

    /// Builds a density from cell masses.
    pub fn from_masses(grid: Grid1D, masses: &[f64]) -> Result<Self> {
        check_values(masses, grid.cells())?;
        let values = masses
            .iter()
            .zip(grid.widths())
            .map(|(m, w)| m / w)
            .collect();
        Self::new(grid, values)
    }

    pub fn uniform(grid: Grid1D) -> Self {
        let n = grid.cells();
        Self::new(grid, vec![1.0; n]).expect("uniform density is valid")
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn correction(&self) -> f64 {
        self.correction
    }

    pub fn masses(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.grid.widths())
            .map(|(v, w)| v * w)
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    /// Raises every value to at least `floor` and renormalises.
    pub fn floored(&self, floor: f64) -> Self {
        let raw: Vec<f64> = self.values.iter().map(|v| v.max(floor)).collect();
        let mut out = Self::new(self.grid.clone(), raw).expect("floored density is valid");
        out.correction *= self.correction;
        out
    }
}

/// Nonnegative piecewise-constant density on a product grid, row-major
/// (`values[i * ny + j]` is the cell `(x_i, y_j)`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDensity2D {
    grid_x: Grid1D,
    grid_y: Grid1D,
    values: Vec<f64>,
    correction: f64,
}

impl DiscreteDensity2D {
    /// Builds a density from raw row-major values, rescaling to unit mass.
    pub fn new(grid_x: Grid1D, grid_y: Grid1D, values: Vec<f64>) -> Result<Self> {
        check_values(&values, grid_x.cells() * grid_y.cells())?;
        let (wx, wy) = (grid_x.widths(), grid_y.widths());
        let ny = wy.len();
        let mass: f64 = values
            .iter()
            .enumerate()
            .map(|(k, v)| v * wx[k / ny] * wy[k % ny])
            .sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidDensity("total mass is zero".into()));
        }
        let correction = 1.0 / mass;
        let values = values.into_iter().map(|v| v * correction).collect();
        Ok(Self {
            grid_x,
            grid_y,
            values,
            correction,
        })
    }

    /// Builds a density from row-major cell masses.
    pub fn from_masses(grid_x: Grid1D, grid_y: Grid1D, masses: &[f64]) -> Result<Self> {
        check_values(masses, grid_x.cells() * grid_y.cells())?;
        let (wx, wy) = (grid_x.widths(), grid_y.widths());
        let ny = wy.len();
        let values = masses
            .iter()
            .enumerate()
            .map(|(k, m)| m / (wx[k / ny] * wy[k % ny]))
            .collect();
        Self::new(grid_x, grid_y, values)
    }

    /// Product density `u(x) v(y)`.
    pub fn product(u: &DiscreteDensity1D, v: &DiscreteDensity1D) -> Self {
        let values = u
            .values()
            .iter()
            .flat_map(|a| v.values().iter().map(move |b| a * b))
            .collect();
        Self::new(u.grid().clone(), v.grid().clone(), values).expect("product density is valid")
    }

    /// Samples `density(x, y)` at cell centres.
    pub fn from_fn(
        grid_x: Grid1D,
        grid_y: Grid1D,
        density: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let (cx, cy) = (grid_x.centers(), grid_y.centers());
        let values = cx
            .iter()
            .flat_map(|&x| cy.iter().map(move |&y| (x, y)))
            .map(|(x, y)| density(x, y))
            .collect();
        Self::new(grid_x, grid_y, values)
    }

    pub fn grid_x(&self) -> &Grid1D {
        &self.grid_x
    }

    pub fn grid_y(&self) -> &Grid1D {
        &self.grid_y
    }

    pub fn nx(&self) -> usize {
        self.grid_x.cells()
    }

    pub fn ny(&self) -> usize {
        self.grid_y.cells()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ny() + j]
    }

    pub fn correction(&self) -> f64 {
        self.correction
    }

    pub fn area(&self, i: usize, j: usize) -> f64 {
        self.grid_x.width(i) * self.grid_y.width(j)
    }

    /// Row-major cell masses.
    pub fn masses(&self) -> Vec<f64> {
        let (wx, wy) = (self.grid_x.widths(), self.grid_y.widths());
        let ny = wy.len();
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| v * wx[k / ny] * wy[k % ny])
            .collect()
    }

    /// Raises every value to at least `floor` and renormalises.
    pub fn floored(&self, floor: f64) -> Self {
        let raw: Vec<f64> = self.values.iter().map(|v| v.max(floor)).collect();
        let mut out = Self::new(self.grid_x.clone(), self.grid_y.clone(), raw)
            .expect("floored density is valid");
        out.correction *= self.correction;
        out
    }

    /// Swaps the roles of `x` and `y`.
    pub fn transposed(&self) -> Self {
        let (nx, ny) = (self.nx(), self.ny());
        let mut values = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                values[j * nx + i] = self.values[i * ny + j];
            }
        }
        Self {
            grid_x: self.grid_y.clone(),
            grid_y: self.grid_x.clone(),
            values,
            correction: self.correction,
        }
    }
}

/// Nondecreasing piecewise-linear CDF through `(xs[k], cum[k])`.
///
/// `cum` starts at exactly 0 and ends at exactly 1. Equal consecutive `xs`
/// with different `cum` encode an atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cdf1D {
    xs: Vec<f64>,
    cum: Vec<f64>,
}

impl Cdf1D {
    /// Validates knots and rescales `cum` so that it ends at 1.
    pub fn from_knots(xs: Vec<f64>, mut cum: Vec<f64>) -> Result<Self> {
        if xs.len() != cum.len() || xs.len() < 2 {
            return Err(Error::InvalidDensity("need >= 2 matching knots".into()));
        }
        if xs.windows(2).any(|w| w[1] < w[0]) || cum.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidDensity("knots must be nondecreasing".into()));
        }
        let total = cum[cum.len() - 1] - cum[0];
        if !(total > 0.0) {
            return Err(Error::InvalidDensity("CDF carries no mass".into()));
        }
        let base = cum[0];
        for c in cum.iter_mut() {
            *c = (*c - base) / total;
        }
        let last = cum.len() - 1;
        cum[0] = 0.0;
        cum[last] = 1.0;
        Ok(Self { xs, cum })
    }

    /// Atomic law: mass `masses[k]` at `positions[k]` (sorted ascending).
    pub fn from_atoms(positions: &[f64], masses: &[f64]) -> Result<Self> {
        if positions.len() != masses.len() || positions.is_empty() {
            return Err(Error::InvalidDensity(
                "atoms need matching positions and masses".into(),
            ));
        }
        let mut xs = Vec::with_capacity(2 * positions.len());
        let mut cum = Vec::with_capacity(2 * positions.len());
        let mut acc = 0.0;
        for (&x, &m) in positions.iter().zip(masses) {
            if !(m >= 0.0) || !x.is_finite() {
                return Err(Error::InvalidDensity(format!("bad atom ({x}, {m})")));
            }
            xs.push(x);
            cum.push(acc);
            acc += m;
            xs.push(x);
            cum.push(acc);
        }
        Self::from_knots(xs, cum)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn cum(&self) -> &[f64] {
        &self.cum
    }

    /// Right-continuous evaluation `F(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&v| v <= x);
        if k == 0 {
            return 0.0;
        }
        if k == self.xs.len() {
            return 1.0;
        }
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (c0, c1) = (self.cum[k - 1], self.cum[k]);
        c0 + (x - x0) / (x1 - x0) * (c1 - c0)
    }

    /// Left-continuous inverse `inf { x : F(x) >= t }`, linear inside cells.
    pub fn quantile(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(t));
        }
        Ok(quantile_on_knots(&self.cum, &self.xs, t))
    }

    /// Quantile knots of this CDF.
    pub fn quantile_table(&self) -> QuantileTable {
        QuantileTable {
            probs: self.cum.clone(),
            quantiles: self.xs.clone(),
        }
    }
}

/// `levels` nondecreasing; returns the value on the first segment whose
/// upper level reaches `t` (left-continuous at jumps). Levels outside the
/// knot range clamp to the end values.
pub(crate) fn quantile_on_knots(levels: &[f64], values: &[f64], t: f64) -> f64 {
    let k = levels.partition_point(|&p| p < t);
    if k == 0 {
        return values[0];
    }
    if k == levels.len() {
        return values[values.len() - 1];
    }
    let (p0, p1) = (levels[k - 1], levels[k]);
    let (q0, q1) = (values[k - 1], values[k]);
    if p1 > p0 {
        q0 + (t - p0) / (p1 - p0) * (q1 - q0)
    } else {
        q1
    }
}

/// Left-continuous inverse of a CDF, stored as knots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileTable {
    probs: Vec<f64>,
    quantiles: Vec<f64>,
}

impl QuantileTable {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    /// Quantile at `t`, clamped to `[0, 1]`.
    pub fn eval(&self, t: f64) -> f64 {
        quantile_on_knots(&self.probs, &self.quantiles, t.clamp(0.0, 1.0))
    }
}

/// CDF of a grid density: prefix sums of cell masses at the nodes.
pub fn build_cdf(d: &DiscreteDensity1D) -> Cdf1D {
    let mut cum = Vec::with_capacity(d.grid().cells() + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for m in d.masses() {
        acc += m;
        cum.push(acc);
    }
    Cdf1D::from_knots(d.grid().nodes().to_vec(), cum).expect("density CDF is valid")
}

/// Midpoint-rule approximation of `int_0^1 (F^-1(t) - G^-1(t))^2 dt`.
pub fn w2_squared_1d(f: &Cdf1D, g: &Cdf1D, n_quad: usize) -> Result<f64> {
    if n_quad < 2 {
        return Err(Error::Config(format!("n_quad must be >= 2, got {n_quad}")));
    }
    let n = n_quad as f64;
    let sum: f64 = (0..n_quad)
        .map(|k| {
            let t = (k as f64 + 0.5) / n;
            let d = quantile_on_knots(&f.cum, &f.xs, t) - quantile_on_knots(&g.cum, &g.xs, t);
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Row (`x`) and column (`y`) marginals.
pub fn marginals_2d(d: &DiscreteDensity2D) -> (DiscreteDensity1D, DiscreteDensity1D) {
    let (nx, ny) = (d.nx(), d.ny());
    let masses = d.masses();
    let mut row = vec![0.0; nx];
    let mut col = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            row[i] += masses[i * ny + j];
            col[j] += masses[i * ny + j];
        }
    }
    (
        DiscreteDensity1D::from_masses(d.grid_x().clone(), &row).expect("row marginal"),
        DiscreteDensity1D::from_masses(d.grid_y().clone(), &col).expect("column marginal"),
    )
}
