#![allow(dead_code)]

use planar_mk::measures::{DiscreteDensity1D, DiscreteDensity2D, Grid1D};
use planar_mk::optimizer::{ipfp_project, CouplingDensity};
use planar_mk::GridField;
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn uniform(r: &mut Xoshiro256PlusPlus) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn unit_grid(n: usize) -> Grid1D {
    Grid1D::uniform(0.0, 1.0, n).unwrap()
}

/// Cell values drawn uniformly from `[0.2, 1.2)` on the unit square.
pub fn random_density(n: usize, seed: u64) -> DiscreteDensity2D {
    let mut r = rng(seed);
    let values = (0..n * n).map(|_| 0.2 + uniform(&mut r)).collect();
    DiscreteDensity2D::new(unit_grid(n), unit_grid(n), values).unwrap()
}

/// Smooth positive density on the unit square.
pub fn smooth_density(n: usize, phase: f64) -> DiscreteDensity2D {
    DiscreteDensity2D::from_fn(unit_grid(n), unit_grid(n), |x, y| {
        let pi = std::f64::consts::PI;
        1.0 + 0.5 * (2.0 * pi * x + phase).sin() * (pi * y).cos() + 0.6 * x * y
    })
    .unwrap()
}

/// Gaussian-like bump with the given mean and width, sampled at centres.
pub fn bump_1d(n: usize, mean: f64, sd: f64) -> DiscreteDensity1D {
    let g = unit_grid(n);
    let values = g
        .centers()
        .iter()
        .map(|x| (-(x - mean) * (x - mean) / (2.0 * sd * sd)).exp())
        .collect();
    DiscreteDensity1D::new(g, values).unwrap()
}

/// Product pair `u1 (x) u2` and `v1 (x) v2` of Gaussian-like bumps with
/// visibly shifted means.
pub fn product_pair(n: usize) -> (DiscreteDensity2D, DiscreteDensity2D) {
    let f = DiscreteDensity2D::product(&bump_1d(n, 0.3, 0.12), &bump_1d(n, 0.6, 0.15));
    let ft = DiscreteDensity2D::product(&bump_1d(n, 0.6, 0.1), &bump_1d(n, 0.35, 0.13));
    (f, ft)
}

/// Feasible coupling: IPFP projection of `f1 (x) f2` times a smooth random
/// positive modulation.
pub fn smooth_random_coupling(
    f: &DiscreteDensity2D,
    ft: &DiscreteDensity2D,
    seed: u64,
) -> CouplingDensity {
    let (f1, f2) = CouplingDensity::targets(f, ft);
    let mut r = rng(seed);
    let (a, b, c, d) = (
        uniform(&mut r),
        uniform(&mut r),
        uniform(&mut r),
        uniform(&mut r),
    );
    let (cx, cy) = (f1.grid().centers(), f2.grid().centers());
    let mut raw = Vec::with_capacity(cx.len() * cy.len());
    for (i, x) in cx.iter().enumerate() {
        for (j, y) in cy.iter().enumerate() {
            let wave = 1.0
                + 0.6 * (6.0 * a * x + 5.0 * b * y + std::f64::consts::TAU * c).sin()
                + 0.3 * (d - 0.5) * (x - y);
            raw.push(f1.values()[i] * f2.values()[j] * wave);
        }
    }
    let raw = GridField::from_values(cx.len(), cy.len(), raw);
    ipfp_project(&raw, &f1, &f2, 100_000, 1e-14).unwrap()
}

/// Feasible coupling with independent random cell noise.
pub fn rough_random_coupling(
    f: &DiscreteDensity2D,
    ft: &DiscreteDensity2D,
    seed: u64,
) -> CouplingDensity {
    let (f1, f2) = CouplingDensity::targets(f, ft);
    let mut r = rng(seed);
    let p = CouplingDensity::independent(&f1, &f2);
    let raw: Vec<f64> = p
        .density()
        .values()
        .iter()
        .map(|v| v * (0.3 + 1.4 * uniform(&mut r)))
        .collect();
    let raw = GridField::from_values(f1.grid().cells(), f2.grid().cells(), raw);
    ipfp_project(&raw, &f1, &f2, 100_000, 1e-14).unwrap()
}

/// Random zero-marginal mass perturbation, unit L1 norm.
pub fn random_direction(nx: usize, ny: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut d: Vec<f64> = (0..nx * ny).map(|_| uniform(&mut r) - 0.5).collect();
    for i in 0..nx {
        let mean = d[i * ny..(i + 1) * ny].iter().sum::<f64>() / ny as f64;
        d[i * ny..(i + 1) * ny].iter_mut().for_each(|v| *v -= mean);
    }
    for j in 0..ny {
        let mean = (0..nx).map(|i| d[i * ny + j]).sum::<f64>() / nx as f64;
        (0..nx).for_each(|i| d[i * ny + j] -= mean);
    }
    let norm: f64 = d.iter().map(|v| v.abs()).sum();
    d.iter_mut().for_each(|v| *v /= norm);
    d
}

/// Random zero-marginal perturbation scaled by `p`: `eta = p * r` where
/// `r` is a random field minus its best `p`-weighted fit `alpha_i + beta_j`,
/// normalised so that `max |r| = 1`. `p + t eta` stays positive for `|t| < 1`.
pub fn weighted_direction(p: &CouplingDensity, seed: u64) -> Vec<f64> {
    let m = p.masses();
    let (nx, ny) = (p.density().nx(), p.density().ny());
    let mut r = rng(seed);
    let mut field: Vec<f64> = (0..nx * ny).map(|_| uniform(&mut r) - 0.5).collect();
    let rows: Vec<f64> = (0..nx)
        .map(|i| m[i * ny..(i + 1) * ny].iter().sum())
        .collect();
    let cols: Vec<f64> = (0..ny)
        .map(|j| (0..nx).map(|i| m[i * ny + j]).sum())
        .collect();
    for _ in 0..2000 {
        for i in 0..nx {
            let a: f64 = (0..ny)
                .map(|j| m[i * ny + j] * field[i * ny + j])
                .sum::<f64>()
                / rows[i];
            (0..ny).for_each(|j| field[i * ny + j] -= a);
        }
        for j in 0..ny {
            let b: f64 = (0..nx)
                .map(|i| m[i * ny + j] * field[i * ny + j])
                .sum::<f64>()
                / cols[j];
            (0..nx).for_each(|i| field[i * ny + j] -= b);
        }
    }
    let scale = field.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    m.iter().zip(&field).map(|(p, f)| p * f / scale).collect()
}

/// `p` moved by `t * eta` in mass units.
pub fn perturbed(p: &CouplingDensity, eta: &[f64], t: f64) -> CouplingDensity {
    let m: Vec<f64> = p.masses().iter().zip(eta).map(|(a, b)| a + t * b).collect();
    CouplingDensity::from_masses(&m, p.row_target(), p.col_target()).unwrap()
}
