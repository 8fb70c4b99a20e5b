//! Conditional laws and the maps `g`, `h` that rebuild a planar coupling
//! from a coupling of `(X1, Y2)`.
//!
//! `g(x, y) = G(x, F_{Y2|X1}(y|x))` sends `Y2` to a copy of `X2` and
//! `h(x, y) = G~(F_{X1|Y2}(x|y), y)` sends `X1` to a copy of `Y1`. Both are
//! evaluated with piecewise-linear conditional CDFs and quantiles. Each map
//! also records, per cell, the first two moments of its image under the
//! atomic (cell-centre) reading, which is what makes [`coupling_cost`]
//! coincide with the reduced functional.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::measures::{quantile_on_knots, Cdf1D, DiscreteDensity2D, QuantileTable};
use crate::optimizer::{CouplingDensity, FEASIBILITY_TOL};
use crate::slice::{slice_moments, SliceTarget};

/// Which variable a conditional law is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Condition on the x-cell, law along y.
    X,
    /// Condition on the y-cell, law along x.
    Y,
}

/// Normalised CDF of one slice of `d`, piecewise linear between grid nodes.
pub fn conditional_cdf(
    d: &DiscreteDensity2D,
    condition_axis: Axis,
    cell_index: usize,
) -> Result<Cdf1D> {
    let (nx, ny) = (d.nx(), d.ny());
    let m = d.masses();
    let (slice, nodes): (Vec<f64>, &[f64]) = match condition_axis {
        Axis::X => {
            if cell_index >= nx {
                return Err(Error::IndexOutOfRange {
                    index: cell_index,
                    len: nx,
                });
            }
            (
                m[cell_index * ny..(cell_index + 1) * ny].to_vec(),
                d.grid_y().nodes(),
            )
        }
        Axis::Y => {
            if cell_index >= ny {
                return Err(Error::IndexOutOfRange {
                    index: cell_index,
                    len: ny,
                });
            }
            (
                (0..nx).map(|i| m[i * ny + cell_index]).collect(),
                d.grid_x().nodes(),
            )
        }
    };
    let mass: f64 = slice.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateSlice {
            index: cell_index,
            mass,
        });
    }
    let mut cum = Vec::with_capacity(slice.len() + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for v in &slice {
        acc += v;
        cum.push(acc / mass);
    }
    Cdf1D::from_knots(nodes.to_vec(), cum)
}

/// One quantile table per conditioning cell: `G(x, .)` for [`Axis::X`],
/// `G~(., y)` for [`Axis::Y`].
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalQuantileField {
    pub axis: Axis,
    pub tables: Vec<QuantileTable>,
}

impl ConditionalQuantileField {
    pub fn new(d: &DiscreteDensity2D, axis: Axis) -> Result<Self> {
        let n = match axis {
            Axis::X => d.nx(),
            Axis::Y => d.ny(),
        };
        let tables = (0..n)
            .map(|k| conditional_cdf(d, axis, k).map(|c| c.quantile_table()))
            .collect::<Result<_>>()?;
        Ok(Self { axis, tables })
    }
}

/// One reconstructed map on the coupling grid.
///
/// Stored with the conditioning variable first: for `g` rows are x-cells
/// and columns y-cells; for `h` the fields are transposed back so that both
/// maps index as `(x-cell, y-cell)`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalMap {
    /// Map value at the cell centres.
    pub centers: GridField,
    /// Map value at the level boundaries of each cell along the mapped axis.
    pub nodes: GridField,
    /// Mean of the atomic image of each cell.
    pub mean: GridField,
    /// Second moment of the atomic image of each cell.
    pub second_moment: GridField,
}

impl ConditionalMap {
    pub fn variance(&self) -> GridField {
        let values = self
            .mean
            .values
            .iter()
            .zip(&self.second_moment.values)
            .map(|(m, s)| (s - m * m).max(0.0))
            .collect();
        GridField::from_values(self.mean.nx, self.mean.ny, values)
    }

    fn transposed(&self) -> Self {
        Self {
            centers: self.centers.transposed(),
            nodes: self.nodes.transposed(),
            mean: self.mean.transposed(),
            second_moment: self.second_moment.transposed(),
        }
    }
}

/// `g` and `h` built from the same coupling.
#[derive(Debug, Clone, Serialize)]
pub struct TransportMapPair {
    pub g: ConditionalMap,
    pub h: ConditionalMap,
    #[serde(skip)]
    pub source_coupling: CouplingDensity,
}

impl TransportMapPair {
    pub fn build(
        f: &DiscreteDensity2D,
        f_tilde: &DiscreteDensity2D,
        p: &CouplingDensity,
    ) -> Result<Self> {
        Ok(Self {
            g: build_g_map(f, p)?,
            h: build_h_map(f_tilde, p)?,
            source_coupling: p.clone(),
        })
    }
}

fn transpose(m: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            out[j * nx + i] = m[i * ny + j];
        }
    }
    out
}

fn check_marginal(target: &[f64], actual: &[f64]) -> Result<()> {
    let max_deviation = target
        .iter()
        .zip(actual)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if max_deviation > FEASIBILITY_TOL {
        return Err(Error::MarginalMismatch {
            max_deviation,
            tolerance: FEASIBILITY_TOL,
        });
    }
    Ok(())
}

/// Map for conditioning rows of `fr` (`nr x nf`) and coupling masses `pm`
/// (`nr x nc`, same row cells).
fn row_map(fr: &DiscreteDensity2D, pm: &[f64], nc: usize) -> Result<ConditionalMap> {
    let (nr, nf) = (fr.nx(), fr.ny());
    let fm = fr.masses();
    let row_f: Vec<f64> = (0..nr)
        .map(|i| fm[i * nf..(i + 1) * nf].iter().sum())
        .collect();
    let row_p: Vec<f64> = (0..nr)
        .map(|i| pm[i * nc..(i + 1) * nc].iter().sum())
        .collect();
    check_marginal(&row_f, &row_p)?;
    let nodes_f = fr.grid_y().nodes();
    let centres_f = fr.grid_y().centers();

    let mut centers = GridField::zeros(nr, nc);
    let mut nodes = GridField::zeros(nr, nc + 1);
    let mut mean = GridField::zeros(nr, nc);
    let mut second = GridField::zeros(nr, nc);
    for i in 0..nr {
        let frow = &fm[i * nf..(i + 1) * nf];
        if !(row_f[i] > 0.0) {
            return Err(Error::DegenerateSlice {
                index: i,
                mass: row_f[i],
            });
        }
        let mut levels = Vec::with_capacity(nf + 1);
        let mut acc = 0.0;
        levels.push(0.0);
        for v in frow {
            acc += v;
            levels.push(acc / row_f[i]);
        }
        let quantile = |t: f64| quantile_on_knots(&levels, nodes_f, t);

        let prow = &pm[i * nc..(i + 1) * nc];
        let r = row_p[i];
        let mut c = 0.0;
        nodes.set(i, 0, quantile(0.0));
        for (j, &m) in prow.iter().enumerate() {
            centers.set(i, j, quantile((c + 0.5 * m) / r));
            c += m;
            nodes.set(i, j + 1, quantile(c / r));
        }

        let target = SliceTarget::new(&centres_f, frow, 0.0);
        let moments = slice_moments(prow, &target);
        let mut c = 0.0;
        for (j, (&m, (s1, s2))) in prow.iter().zip(moments).enumerate() {
            c += m;
            if m > 0.0 {
                mean.set(i, j, s1 / m);
                second.set(i, j, s2 / m);
            } else {
                let q = target.at(c);
                mean.set(i, j, q);
                second.set(i, j, q * q);
            }
        }
    }
    Ok(ConditionalMap {
        centers,
        nodes,
        mean,
        second_moment: second,
    })
}

fn check_grid(a: &crate::measures::Grid1D, b: &crate::measures::Grid1D, what: &str) -> Result<()> {
    if a.approx_eq(b, 1e-12) {
        Ok(())
    } else {
        Err(Error::GridMismatch(what.into()))
    }
}

/// `g(x, y) = G(x, F_{Y2|X1}(y|x))`, monotone in `y` for every `x`.
pub fn build_g_map(f: &DiscreteDensity2D, p: &CouplingDensity) -> Result<ConditionalMap> {
    check_grid(
        f.grid_x(),
        p.density().grid_x(),
        "coupling x-grid must equal the x-grid of f",
    )?;
    row_map(f, &p.masses(), p.density().ny())
}

/// `h(x, y) = G~(F_{X1|Y2}(x|y), y)`, monotone in `x` for every `y`.
pub fn build_h_map(f_tilde: &DiscreteDensity2D, p: &CouplingDensity) -> Result<ConditionalMap> {
    check_grid(
        f_tilde.grid_y(),
        p.density().grid_y(),
        "coupling y-grid must equal the y-grid of f_tilde",
    )?;
    let (nx, ny) = (p.density().nx(), p.density().ny());
    let pt = transpose(&p.masses(), nx, ny);
    Ok(row_map(&f_tilde.transposed(), &pt, nx)?.transposed())
}

/// Deviation of a pushed-forward law from its target, in mass units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PushforwardReport {
    pub l1: f64,
    pub max_abs: f64,
}

/// Spreads `mass` uniformly over `[lo, hi]` into the cells of `nodes`.
fn deposit(nodes: &[f64], lo: f64, hi: f64, mass: f64, out: &mut [f64]) {
    let n = out.len();
    if hi - lo <= 1e-14 * (nodes[n] - nodes[0]) {
        let k = nodes[1..n].partition_point(|&x| x <= 0.5 * (lo + hi));
        out[k] += mass;
        return;
    }
    let start = nodes[1..n].partition_point(|&x| x <= lo);
    for k in start..n {
        if nodes[k] >= hi {
            break;
        }
        let overlap = hi.min(nodes[k + 1]) - lo.max(nodes[k]);
        if overlap > 0.0 {
            out[k] += mass * overlap / (hi - lo);
        }
    }
}

fn pushforward_rows(
    fr: &DiscreteDensity2D,
    pm: &[f64],
    nc: usize,
    map_nodes: &GridField,
) -> PushforwardReport {
    let (nr, nf) = (fr.nx(), fr.ny());
    let fm = fr.masses();
    let nodes = fr.grid_y().nodes();
    let mut law = vec![0.0; nf];
    let (mut l1, mut max_abs) = (0.0, 0.0_f64);
    for i in 0..nr {
        law.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..nc {
            deposit(
                nodes,
                map_nodes.get(i, j),
                map_nodes.get(i, j + 1),
                pm[i * nc + j],
                &mut law,
            );
        }
        for (q, f) in law.iter().zip(&fm[i * nf..(i + 1) * nf]) {
            l1 += (q - f).abs();
            max_abs = max_abs.max((q - f).abs());
        }
    }
    PushforwardReport { l1, max_abs }
}

/// Law of `(X1, g(X1, Y2))` under `p` against `f`. Each coupling cell's
/// mass is spread uniformly over its image segment along `X2`.
pub fn pushforward_check(
    f: &DiscreteDensity2D,
    p: &CouplingDensity,
    g: &ConditionalMap,
) -> PushforwardReport {
    pushforward_rows(f, &p.masses(), p.density().ny(), &g.nodes)
}

/// Law of `(h(X1, Y2), Y2)` under `p` against `f_tilde`.
pub fn pushforward_check_h(
    f_tilde: &DiscreteDensity2D,
    p: &CouplingDensity,
    h: &ConditionalMap,
) -> PushforwardReport {
    let (nx, ny) = (p.density().nx(), p.density().ny());
    let pt = transpose(&p.masses(), nx, ny);
    pushforward_rows(&f_tilde.transposed(), &pt, nx, &h.nodes.transposed())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostDecomposition {
    pub total: f64,
    /// `E (X1 - h)^2`.
    pub term_x: f64,
    /// `E (Y2 - g)^2`.
    pub term_y: f64,
    /// The same sum with every cell sent to its centre value only.
    pub midpoint_total: f64,
}

/// `E|X^ - Y^|^2` split by axis, from the atomic images of `g` and `h`.
pub fn coupling_cost(
    f: &DiscreteDensity2D,
    f_tilde: &DiscreteDensity2D,
    p: &CouplingDensity,
    g: &ConditionalMap,
    h: &ConditionalMap,
) -> Result<CostDecomposition> {
    check_grid(
        f.grid_x(),
        p.density().grid_x(),
        "coupling x-grid must equal the x-grid of f",
    )?;
    check_grid(
        f_tilde.grid_y(),
        p.density().grid_y(),
        "coupling y-grid must equal the y-grid of f_tilde",
    )?;
    let (nx, ny) = (p.density().nx(), p.density().ny());
    if g.mean.nx != nx || g.mean.ny != ny || h.mean.nx != nx || h.mean.ny != ny {
        return Err(Error::GridMismatch(
            "maps do not match the coupling grid".into(),
        ));
    }
    let m = p.masses();
    let x1 = p.density().grid_x().centers();
    let y2 = p.density().grid_y().centers();
    let (mut term_x, mut term_y, mut mid) = (0.0, 0.0, 0.0);
    for i in 0..nx {
        for j in 0..ny {
            let w = m[i * ny + j];
            let (x, y) = (x1[i], y2[j]);
            term_y += w * (y * y - 2.0 * y * g.mean.get(i, j) + g.second_moment.get(i, j));
            term_x += w * (x * x - 2.0 * x * h.mean.get(i, j) + h.second_moment.get(i, j));
            mid += w * ((y - g.centers.get(i, j)).powi(2) + (x - h.centers.get(i, j)).powi(2));
        }
    }
    Ok(CostDecomposition {
        total: term_x + term_y,
        term_x,
        term_y,
        midpoint_total: mid,
    })
}
