use planar_mk::measures::{build_cdf, w2_squared_1d, DiscreteDensity1D, DiscreteDensity2D, Grid1D};
use planar_mk::oracle::{comonotone_plan_1d, instance_1d, solve_lp, Atoms};
use planar_mk::{evaluate_l, ipfp_project, CouplingDensity, GridField};
use proptest::prelude::*;

fn weights(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..2.0, n)
}

fn density(values: Vec<f64>) -> DiscreteDensity1D {
    let g = Grid1D::uniform(-1.0, 2.0, values.len()).unwrap();
    DiscreteDensity1D::new(g, values).unwrap()
}

fn atoms() -> impl Strategy<Value = Atoms> {
    (1usize..7).prop_flat_map(|n| {
        (prop::collection::vec(-3.0f64..3.0, n), weights(n..n + 1)).prop_map(|(x, w)| {
            let total: f64 = w.iter().sum();
            Atoms::new(x, w.iter().map(|v| v / total).collect()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_is_monotone(values in weights(1..20), ts in prop::collection::vec(0.0f64..=1.0, 2..30)) {
        let cdf = build_cdf(&density(values));
        let mut ts = ts;
        ts.sort_by(f64::total_cmp);
        let q: Vec<f64> = ts.iter().map(|&t| cdf.quantile(t).unwrap()).collect();
        for w in q.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12);
        }
        prop_assert!(q.iter().all(|v| (-1.0 - 1e-12..=2.0 + 1e-12).contains(v)));
    }

    #[test]
    fn cdf_inverts_quantile(values in weights(1..20), t in 0.01f64..0.99) {
        let cdf = build_cdf(&density(values));
        prop_assert!((cdf.eval(cdf.quantile(t).unwrap()) - t).abs() < 1e-9);
    }

    #[test]
    fn w2_is_symmetric_and_vanishes_on_the_diagonal(a in weights(2..12), b in weights(2..12)) {
        let (fa, fb) = (build_cdf(&density(a)), build_cdf(&density(b)));
        let ab = w2_squared_1d(&fa, &fb, 2000).unwrap();
        let ba = w2_squared_1d(&fb, &fa, 2000).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(w2_squared_1d(&fa, &fa, 2000).unwrap() < 1e-24);
    }

    #[test]
    fn comonotone_plan_matches_lp(f in atoms(), g in atoms()) {
        let co = comonotone_plan_1d(&f, &g).unwrap();
        let lp = solve_lp(&instance_1d(&f, &g).unwrap()).unwrap();
        prop_assert!((co.objective - lp.objective).abs() < 1e-10, "{} vs {}", co.objective, lp.objective);
    }

    #[test]
    fn comonotone_cost_ignores_atom_order(f in atoms(), g in atoms(), k in 0usize..100) {
        let n = f.positions.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + k) % n).collect();
        let shuffled = if is_permutation(&perm) {
            Atoms::new(perm.iter().map(|&i| f.positions[i]).collect(), perm.iter().map(|&i| f.masses[i]).collect()).unwrap()
        } else {
            Atoms::new(f.positions.iter().rev().copied().collect(), f.masses.iter().rev().copied().collect()).unwrap()
        };
        let a = comonotone_plan_1d(&f, &g).unwrap().objective;
        let b = comonotone_plan_1d(&shuffled, &g).unwrap().objective;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn reduced_cost_is_nonnegative(
        fv in prop::collection::vec(0.1f64..2.0, 16),
        gv in prop::collection::vec(0.1f64..2.0, 16),
        pv in prop::collection::vec(0.1f64..2.0, 16),
    ) {
        let grid = Grid1D::uniform(0.0, 1.0, 4).unwrap();
        let f = DiscreteDensity2D::new(grid.clone(), grid.clone(), fv).unwrap();
        let ft = DiscreteDensity2D::new(grid.clone(), grid, gv).unwrap();
        let (f1, f2) = CouplingDensity::targets(&f, &ft);
        let p = ipfp_project(&GridField::from_values(4, 4, pv), &f1, &f2, 100_000, 1e-14).unwrap();
        prop_assert!(evaluate_l(&f, &ft, &p).unwrap() >= -1e-15);
    }
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| !std::mem::replace(&mut seen[i], true))
}
