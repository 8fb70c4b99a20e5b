//! Exact discrete optimal transport by the transportation simplex.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteDensity2D;

/// Largest number of plan variables accepted by [`solve_full_2d`].
pub const MAX_LP_VARIABLES: usize = 4096;

const BALANCE_TOL: f64 = 1e-12;
const PERTURBATION: f64 = 1e-13;

/// Balanced transportation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportInstance {
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    /// `supply.len() x demand.len()`.
    pub cost: Vec<Vec<f64>>,
}

impl TransportInstance {
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, cost: Vec<Vec<f64>>) -> Result<Self> {
        let out = Self {
            supply,
            demand,
            cost,
        };
        out.validate()?;
        Ok(out)
    }

    /// Squared-distance instance between two sets of weighted points.
    pub fn squared_distance<const D: usize>(
        from: &[[f64; D]],
        supply: Vec<f64>,
        to: &[[f64; D]],
        demand: Vec<f64>,
    ) -> Result<Self> {
        let cost = from
            .iter()
            .map(|a| {
                to.iter()
                    .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
                    .collect()
            })
            .collect();
        Self::new(supply, demand, cost)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k) = (self.supply.len(), self.demand.len());
        if m == 0 || k == 0 {
            return Err(Error::InvalidInstance(
                "supply and demand must be nonempty".into(),
            ));
        }
        if self.cost.len() != m || self.cost.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInstance(format!(
                "cost must be a {m}x{k} matrix"
            )));
        }
        let bad_mass = |v: &f64| !(v.is_finite() && *v >= 0.0);
        if self.supply.iter().any(bad_mass) || self.demand.iter().any(bad_mass) {
            return Err(Error::InvalidInstance(
                "masses must be finite and nonnegative".into(),
            ));
        }
        if self.cost.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInstance("costs must be finite".into()));
        }
        let supply: f64 = self.supply.iter().sum();
        let demand: f64 = self.demand.iter().sum();
        if (supply - demand).abs() > BALANCE_TOL {
            return Err(Error::Unbalanced { supply, demand });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `supply.len() x demand.len()`.
    pub flows: Vec<Vec<f64>>,
    pub objective: f64,
}

impl TransportPlan {
    fn from_flows(flows: Vec<Vec<f64>>, cost: &[Vec<f64>]) -> Self {
        let objective = flows
            .iter()
            .zip(cost)
            .flat_map(|(f, c)| f.iter().zip(c).map(|(a, b)| a * b))
            .sum();
        Self { flows, objective }
    }

    /// Number of strictly positive flows.
    pub fn support_size(&self) -> usize {
        self.flows.iter().flatten().filter(|v| **v > 0.0).count()
    }
}

struct Tree {
    m: usize,
    k: usize,
    /// Basic cells as `(row, column)`.
    basis: Vec<(usize, usize)>,
}

impl Tree {
    /// Adjacency over `m + k` nodes (rows first) with basis positions.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.k];
        for (e, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, e));
            adj[self.m + j].push((i, e));
        }
        adj
    }

    fn potentials(&self, cost: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.k];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0]);
        while let Some(n) = queue.pop_front() {
            for &(o, e) in &adj[n] {
                if pot[o].is_nan() {
                    let (i, j) = self.basis[e];
                    pot[o] = cost[i][j] - pot[n];
                    queue.push_back(o);
                }
            }
        }
        let v = pot.split_off(self.m);
        (pot, v)
    }

    /// Basis positions along the tree path from row `i` to column `j`.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let n = self.m + self.k;
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[i] = true;
        let mut queue = VecDeque::from([i]);
        let goal = self.m + j;
        while let Some(x) = queue.pop_front() {
            if x == goal {
                break;
            }
            for &(o, e) in &adj[x] {
                if !seen[o] {
                    seen[o] = true;
                    prev[o] = Some((x, e));
                    queue.push_back(o);
                }
            }
        }
        let mut edges = Vec::new();
        let mut x = goal;
        while let Some((p, e)) = prev[x] {
            edges.push(e);
            x = p;
        }
        edges.reverse();
        edges
    }

    /// Flows on the basis meeting `supply` and `demand` exactly.
    fn flows(&self, supply: &[f64], demand: &[f64]) -> Vec<f64> {
        let adj = self.adjacency();
        let mut rest: Vec<f64> = supply.iter().chain(demand).copied().collect();
        let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut used = vec![false; self.basis.len()];
        let mut flow = vec![0.0; self.basis.len()];
        let mut leaves: VecDeque<usize> = (0..rest.len()).filter(|&n| degree[n] == 1).collect();
        while let Some(n) = leaves.pop_front() {
            if degree[n] != 1 {
                continue;
            }
            let Some(&(o, e)) = adj[n].iter().find(|(_, e)| !used[*e]) else {
                continue;
            };
            used[e] = true;
            flow[e] = rest[n];
            rest[o] -= rest[n];
            rest[n] = 0.0;
            degree[n] -= 1;
            degree[o] -= 1;
            if degree[o] == 1 {
                leaves.push_back(o);
            }
        }
        flow
    }
}

/// Northwest-corner spanning tree.
fn northwest(supply: &[f64], demand: &[f64]) -> (Vec<(usize, usize)>, Vec<f64>) {
    let (m, k) = (supply.len(), demand.len());
    let (mut i, mut j) = (0, 0);
    let (mut rs, mut rd) = (supply[0], demand[0]);
    let mut basis = Vec::with_capacity(m + k - 1);
    let mut flow = Vec::with_capacity(m + k - 1);
    loop {
        let x = rs.min(rd);
        basis.push((i, j));
        flow.push(x);
        rs -= x;
        rd -= x;
        if i == m - 1 && j == k - 1 {
            break;
        }
        if j == k - 1 || (i < m - 1 && rs <= rd) {
            i += 1;
            rs = supply[i];
        } else {
            j += 1;
            rd = demand[j];
        }
    }
    (basis, flow)
}

/// Optimal basic plan by the transportation simplex (northwest-corner
/// start, Bland's entering rule, perturbed supplies against degeneracy).
pub fn solve_lp(instance: &TransportInstance) -> Result<TransportPlan> {
    instance.validate()?;
    let (m, k) = (instance.supply.len(), instance.demand.len());
    let cost = &instance.cost;
    let mut supply = instance.supply.clone();
    let mut demand = instance.demand.clone();
    let mut shift = 0.0;
    for (i, s) in supply.iter_mut().enumerate() {
        let d = PERTURBATION * (i + 1) as f64;
        *s += d;
        shift += d;
    }
    demand[k - 1] += shift;

    let (basis, mut flow) = northwest(&supply, &demand);
    let mut tree = Tree { m, k, basis };
    let scale = cost.iter().flatten().fold(1.0_f64, |a, c| a.max(c.abs()));
    let threshold = -1e-12 * scale;
    let mut in_basis = vec![false; m * k];
    for &(i, j) in &tree.basis {
        in_basis[i * k + j] = true;
    }
    let max_pivots = 50 * m * k + 1000;
    for _ in 0..max_pivots {
        let (u, v) = tree.potentials(cost);
        let entering = (0..m * k).find(|&c| {
            let (i, j) = (c / k, c % k);
            !in_basis[c] && cost[i][j] - u[i] - v[j] < threshold
        });
        let Some(c) = entering else {
            let exact = tree.flows(&instance.supply, &instance.demand);
            let mut flows = vec![vec![0.0; k]; m];
            for (&(i, j), &x) in tree.basis.iter().zip(&exact) {
                flows[i][j] = if x > -1e-11 { x.max(0.0) } else { x };
            }
            return Ok(TransportPlan::from_flows(flows, cost));
        };
        let (ei, ej) = (c / k, c % k);
        let path = tree.path(ei, ej);
        // edges alternate minus, plus, ... starting next to the entering row
        let leaving = path
            .iter()
            .step_by(2)
            .copied()
            .min_by(|&a, &b| {
                flow[a].total_cmp(&flow[b]).then_with(|| {
                    let (ia, ja) = tree.basis[a];
                    let (ib, jb) = tree.basis[b];
                    (ia * k + ja).cmp(&(ib * k + jb))
                })
            })
            .expect("cycle has a minus edge");
        let theta = flow[leaving];
        for (n, &e) in path.iter().enumerate() {
            if n % 2 == 0 {
                flow[e] -= theta;
            } else {
                flow[e] += theta;
            }
        }
        let (li, lj) = tree.basis[leaving];
        in_basis[li * k + lj] = false;
        in_basis[c] = true;
        tree.basis[leaving] = (ei, ej);
        flow[leaving] = theta;
    }
    Err(Error::InvalidInstance(format!(
        "transportation simplex exceeded {max_pivots} pivots"
    )))
}

/// Weighted points on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atoms {
    pub positions: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Atoms {
    pub fn new(positions: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if positions.len() != masses.len() || positions.is_empty() {
            return Err(Error::InvalidInstance(
                "atoms need matching nonempty positions and masses".into(),
            ));
        }
        Ok(Self { positions, masses })
    }

    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.positions.len()).collect();
        idx.sort_by(|&a, &b| self.positions[a].total_cmp(&self.positions[b]));
        idx
    }
}

/// Squared-distance instance between two atom sets on the line.
pub fn instance_1d(f: &Atoms, g: &Atoms) -> Result<TransportInstance> {
    let from: Vec<[f64; 1]> = f.positions.iter().map(|x| [*x]).collect();
    let to: Vec<[f64; 1]> = g.positions.iter().map(|x| [*x]).collect();
    TransportInstance::squared_distance(&from, f.masses.clone(), &to, g.masses.clone())
}

/// Monotone rearrangement plan: atoms are matched in increasing order by
/// merging cumulative masses.
pub fn comonotone_plan_1d(f: &Atoms, g: &Atoms) -> Result<TransportPlan> {
    let instance = instance_1d(f, g)?;
    let (oa, ob) = (f.order(), g.order());
    let mut flows = vec![vec![0.0; ob.len()]; oa.len()];
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (f.masses[oa[0]], g.masses[ob[0]]);
    loop {
        let x = ra.min(rb);
        flows[oa[i]][ob[j]] += x;
        ra -= x;
        rb -= x;
        let (last_a, last_b) = (i + 1 == oa.len(), j + 1 == ob.len());
        if last_a && last_b {
            break;
        }
        if !last_a && (ra <= rb || last_b) {
            i += 1;
            ra += f.masses[oa[i]];
        } else {
            j += 1;
            rb += g.masses[ob[j]];
        }
    }
    Ok(TransportPlan::from_flows(flows, &instance.cost))
}

/// Optimal plan between two planar densities read as atoms at their cell
/// centres, with per-axis cost split.
#[derive(Debug, Clone, Serialize)]
pub struct FullPlan {
    pub plan: TransportPlan,
    pub cost: f64,
    /// `sum flow (x1 - y1)^2`.
    pub term_x: f64,
    /// `sum flow (x2 - y2)^2`.
    pub term_y: f64,
}

fn atoms_2d(d: &DiscreteDensity2D) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (cx, cy) = (d.grid_x().centers(), d.grid_y().centers());
    let points = cx
        .iter()
        .flat_map(|&x| cy.iter().map(move |&y| [x, y]))
        .collect();
    (points, d.masses())
}

/// Exact planar transport cost with squared Euclidean distance.
pub fn solve_full_2d(f: &DiscreteDensity2D, f_tilde: &DiscreteDensity2D) -> Result<FullPlan> {
    let variables = f.nx() * f.ny() * f_tilde.nx() * f_tilde.ny();
    if variables > MAX_LP_VARIABLES {
        return Err(Error::SizeLimit {
            variables,
            limit: MAX_LP_VARIABLES,
        });
    }
    let (from, supply) = atoms_2d(f);
    let (to, mut demand) = atoms_2d(f_tilde);
    // absorb the last-bit rounding of the two unit masses
    let gap: f64 = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    let last = demand.len() - 1;
    demand[last] = (demand[last] + gap).max(0.0);
    let instance = TransportInstance::squared_distance(&from, supply, &to, demand)?;
    let plan = solve_lp(&instance)?;
    let (mut term_x, mut term_y) = (0.0, 0.0);
    for (a, row) in from.iter().zip(&plan.flows) {
        for (b, w) in to.iter().zip(row) {
            term_x += w * (a[0] - b[0]).powi(2);
            term_y += w * (a[1] - b[1]).powi(2);
        }
    }
    Ok(FullPlan {
        cost: plan.objective,
        plan,
        term_x,
        term_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Grid1D;

    fn third() -> Vec<f64> {
        vec![1.0 / 3.0; 3]
    }

    #[test]
    fn single_cell() {
        let inst = TransportInstance::new(vec![1.0], vec![1.0], vec![vec![2.5]]).unwrap();
        assert_eq!(solve_lp(&inst).unwrap().objective, 2.5);
    }

    #[test]
    fn shifted_three_atoms() {
        let f = Atoms::new(vec![0.0, 1.0, 2.0], third()).unwrap();
        let g = Atoms::new(vec![1.0, 2.0, 3.0], third()).unwrap();
        let plan = solve_lp(&instance_1d(&f, &g).unwrap()).unwrap();
        assert!((plan.objective - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((plan.flows[i][i] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(plan.support_size() <= 5);
    }

    #[test]
    fn identity_plan() {
        let f = Atoms::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let plan = solve_lp(&instance_1d(&f, &f).unwrap()).unwrap();
        assert!(plan.objective.abs() < 1e-12);
        assert!((plan.flows[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unbalanced_is_rejected() {
        let r = TransportInstance::new(vec![0.5], vec![1.0], vec![vec![1.0]]);
        assert!(matches!(r, Err(Error::Unbalanced { .. })));
    }

    #[test]
    fn comonotone_pairs_in_order() {
        let f = Atoms::new(vec![1.0, 0.0], vec![0.5, 0.5]).unwrap();
        let g = Atoms::new(vec![2.0, 3.0], vec![0.5, 0.5]).unwrap();
        let plan = comonotone_plan_1d(&f, &g).unwrap();
        assert_eq!(plan.flows, vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        assert!((plan.objective - 4.0).abs() < 1e-12);
    }

    #[test]
    fn full_2d_point_masses() {
        let g = Grid1D::uniform(-0.5, 1.5, 2).unwrap();
        let f = DiscreteDensity2D::new(g.clone(), g.clone(), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let ft = DiscreteDensity2D::new(g.clone(), g.clone(), vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let full = solve_full_2d(&f, &ft).unwrap();
        assert!((full.cost - 2.0).abs() < 1e-12);
        assert!((full.term_x + full.term_y - full.cost).abs() < 1e-12);
    }

    #[test]
    fn full_2d_size_limit() {
        let g = Grid1D::uniform(0.0, 1.0, 16).unwrap();
        let f = DiscreteDensity2D::new(g.clone(), g.clone(), vec![1.0; 256]).unwrap();
        assert!(matches!(
            solve_full_2d(&f, &f),
            Err(Error::SizeLimit { .. })
        ));
    }
}
