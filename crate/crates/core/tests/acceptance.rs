//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use common::*;
use planar_mk::io::density_2d_to_json;
use planar_mk::measures::{build_cdf, marginals_2d, w2_squared_1d, Cdf1D};
use planar_mk::optimizer::{solve, CouplingDensity, SolveConfig, SolveReport, Termination};
use planar_mk::oracle::{comonotone_plan_1d, instance_1d, solve_full_2d, solve_lp, Atoms};
use planar_mk::reduction::{build_g_map, build_h_map, pushforward_check, pushforward_check_h};
use planar_mk::variational::lemmas::{
    default_eps_sequence, lemma1_checker, lemma2_checker, Lemma2Schedule,
};
use planar_mk::variational::ReducedProblem;
use planar_mk::DiscreteDensity2D;
use rand_xoshiro::rand_core::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_atoms(r: &mut rand_xoshiro::Xoshiro256PlusPlus, n: usize) -> Atoms {
    let mut pos: Vec<f64> = (0..n).map(|_| 4.0 * uniform(r) - 2.0).collect();
    pos.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + uniform(r)).collect();
    let total: f64 = raw.iter().sum();
    Atoms::new(pos, raw.iter().map(|m| m / total).collect()).unwrap()
}

/// Masses that are whole multiples of `1 / quad`.
fn aligned_atoms(r: &mut rand_xoshiro::Xoshiro256PlusPlus, n: usize, quad: usize) -> Atoms {
    let mut pos: Vec<f64> = (0..n).map(|_| 4.0 * uniform(r) - 2.0).collect();
    pos.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + uniform(r)).collect();
    let total: f64 = raw.iter().sum();
    let mut counts: Vec<usize> = raw
        .iter()
        .map(|m| ((m / total) * quad as f64).floor().max(1.0) as usize)
        .collect();
    let used: usize = counts.iter().sum();
    let last = counts.len() - 1;
    counts[last] = (counts[last] + quad).saturating_sub(used).max(1);
    let sum: usize = counts.iter().sum();
    counts[0] = counts[0] + quad - sum;
    Atoms::new(
        pos,
        counts.iter().map(|&c| c as f64 / quad as f64).collect(),
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let mut r = rng(101);
    let quad = 10_000;
    let (mut worst_plan, mut worst_w2) = (0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let m = 1 + (r.next_u64() % 32) as usize;
        let k = 1 + (r.next_u64() % 32) as usize;
        let (a, b) = (random_atoms(&mut r, m), random_atoms(&mut r, k));
        let lp = solve_lp(&instance_1d(&a, &b).unwrap()).unwrap().objective;
        let como = comonotone_plan_1d(&a, &b).unwrap().objective;
        worst_plan = worst_plan.max((lp - como).abs());

        let (a, b) = (
            aligned_atoms(&mut r, m, quad),
            aligned_atoms(&mut r, k, quad),
        );
        let lp = solve_lp(&instance_1d(&a, &b).unwrap()).unwrap().objective;
        let fa = Cdf1D::from_atoms(&a.positions, &a.masses).unwrap();
        let fb = Cdf1D::from_atoms(&b.positions, &b.masses).unwrap();
        let w2 = w2_squared_1d(&fa, &fb, quad).unwrap();
        worst_w2 = worst_w2.max((lp - w2).abs());
    }
    check(
        worst_plan <= 1e-9 && worst_w2 <= 1e-6,
        format!("max |comonotone - LP| = {worst_plan:.2e}, max |w2 - LP| = {worst_w2:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let mut g_dev = Vec::new();
    let mut h_dev = Vec::new();
    for n in [8, 16, 32] {
        let f = smooth_density(n, 0.3);
        let ft = smooth_density(n, 1.9).transposed();
        let p = smooth_random_coupling(&f, &ft, 5);
        let g = build_g_map(&f, &p).unwrap();
        let h = build_h_map(&ft, &p).unwrap();
        g_dev.push(pushforward_check(&f, &p, &g).l1);
        h_dev.push(pushforward_check_h(&ft, &p, &h).l1);
    }
    let decreasing = |d: &[f64]| d.windows(2).all(|w| w[1] < w[0]);
    check(
        decreasing(&g_dev) && g_dev[2] < 0.02 && decreasing(&h_dev) && h_dev[2] < 0.02,
        format!("L1 deviation at n=8/16/32: g {g_dev:.4?}, h {h_dev:.4?}"),
    )
}

fn criterion_3() -> Outcome {
    let eps = 1e-5;
    let instances: Vec<(&str, DiscreteDensity2D, DiscreteDensity2D)> = vec![
        ("random", random_density(8, 31), random_density(8, 32)),
        (
            "smooth",
            smooth_density(8, 0.4),
            smooth_density(8, 2.2).transposed(),
        ),
        ("product", product_pair(8).0, product_pair(8).1),
    ];
    let mut worst = 0.0_f64;
    for (k, (_, f, ft)) in instances.iter().enumerate() {
        let problem = ReducedProblem::new(f, ft).unwrap();
        for t in 0..10u64 {
            let seed = 1000 * k as u64 + t;
            let p = if t % 2 == 0 {
                smooth_random_coupling(f, ft, seed)
            } else {
                rough_random_coupling(f, ft, seed)
            };
            let eta = weighted_direction(&p, seed + 500);
            let (phi, psi) = problem.first_variation(&p).unwrap();
            let analytic: f64 = eta
                .iter()
                .enumerate()
                .map(|(c, e)| (phi.values[c] + psi.values[c]) * e)
                .sum();
            let lp = problem.evaluate(&perturbed(&p, &eta, eps)).unwrap();
            let lm = problem.evaluate(&perturbed(&p, &eta, -eps)).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            worst = worst.max((analytic - fd).abs() / fd.abs());
        }
    }
    check(
        worst < 1e-4,
        format!("max relative error over 30 pairs = {worst:.2e}"),
    )
}

struct Solved {
    name: String,
    report: SolveReport,
}

fn criterion_4(solved: &mut Vec<Solved>) -> Outcome {
    let cfg = SolveConfig::default();
    let mut worst_gap = 0.0_f64;
    for s in 0..5u64 {
        let f = random_density(4, 2 * s + 11);
        let ft = random_density(4, 2 * s + 12);
        let oracle = solve_full_2d(&f, &ft).unwrap().cost;
        let report = solve(&f, &ft, &cfg).unwrap();
        worst_gap = worst_gap.max((report.l_exact - oracle).abs());
        solved.push(Solved {
            name: format!("generic 4x4 #{s}"),
            report,
        });
    }
    let (f, ft) = product_pair(16);
    let (fx, fy) = marginals_2d(&f);
    let (tx, ty) = marginals_2d(&ft);
    let per_axis = w2_squared_1d(&build_cdf(&fx), &build_cdf(&tx), 10_000).unwrap()
        + w2_squared_1d(&build_cdf(&fy), &build_cdf(&ty), 10_000).unwrap();
    let report = solve(&f, &ft, &cfg).unwrap();
    let rel = (report.l_exact - per_axis).abs() / per_axis;
    let l_star = report.l_exact;
    solved.push(Solved {
        name: "product 16x16".into(),
        report,
    });
    check(
        worst_gap <= 1e-3 && rel <= 0.02,
        format!(
            "max |L(p*) - LP| on 5 generic 4x4 = {worst_gap:.2e}; product 16x16 L(p*) = {l_star:.6}, per-axis sum = {per_axis:.6}, relative gap = {:.2}%",
            100.0 * rel
        ),
    )
}

fn criterion_5(solved: &[Solved]) -> Outcome {
    let mut ok = true;
    let mut worst_ratio = 0.0_f64;
    let mut converged = 0;
    for s in solved {
        if s.report.termination == Termination::MaxIters {
            continue;
        }
        converged += 1;
        let ratio = s.report.el_residual_final / s.report.el_residual_initial;
        worst_ratio = worst_ratio.max(ratio);
        if ratio > 0.25 {
            ok = false;
            println!("    {}: EL ratio {ratio:.3}", s.name);
        }
    }
    let f = smooth_density(12, 0.7);
    let (f1, f2) = CouplingDensity::targets(&f, &f);
    let p = CouplingDensity::new(f.clone(), f1, f2).unwrap();
    let trivial = ReducedProblem::new(&f, &f)
        .unwrap()
        .euler_lagrange(&p)
        .unwrap()
        .residual
        .max_abs();
    check(
        ok && converged > 0 && trivial <= 1e-12,
        format!(
            "worst residual ratio p*/independent over {converged} converged solves = {worst_ratio:.2e}; trivial instance max |residual| = {trivial:.1e}"
        ),
    )
}

type Beta = fn(f64, f64) -> f64;

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    let l1: [(&str, Beta, f64, f64); 3] = [
        ("1", |_, _| 1.0, 0.0, 0.0),
        ("x+y", |x, y| x + y, 0.0, 0.0),
        ("sin(x)cos(y)", |x, y| x.sin() * y.cos(), 0.3, 0.7),
    ];
    for (name, beta, a, b) in l1 {
        let r = lemma1_checker(&beta, a, b, &default_eps_sequence());
        let err = (r.limit - beta(a, b)).abs();
        ok &= err <= 1e-4 && r.order_ok(0.3);
        lines.push(format!(
            "L1 {name}: err {err:.1e} order {:?}",
            r.observed_order.map(|o| (o * 100.0).round() / 100.0)
        ));
    }
    let l2: [(&str, Beta, f64, f64, f64); 3] = [
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
    for (name, beta, a, b, exact) in l2 {
        let r = lemma2_checker(&beta, a, b, &Lemma2Schedule::default());
        let err = (r.limit - exact).abs();
        ok &= err <= 1e-4 && r.order_ok(0.3);
        lines.push(format!(
            "L2 {name}: err {err:.1e} order {:?}",
            r.observed_order.map(|o| (o * 100.0).round() / 100.0)
        ));
    }
    check(ok, lines.join("; "))
}

fn strip_timing(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

fn criterion_7(solved: &[Solved]) -> Outcome {
    let worst = solved
        .iter()
        .map(|s| s.report.max_marginal_error)
        .fold(0.0_f64, f64::max);

    let dir = tempfile::tempdir().unwrap();
    let f = random_density(4, 71);
    let ft = random_density(4, 72);
    let fp = dir.path().join("f.json");
    let gp = dir.path().join("g.json");
    let cp = dir.path().join("config.json");
    std::fs::write(&fp, density_2d_to_json(&f).unwrap()).unwrap();
    std::fs::write(&gp, density_2d_to_json(&ft).unwrap()).unwrap();
    std::fs::write(&cp, r#"{"multistart": 4}"#).unwrap();
    let mut reports = Vec::new();
    let mut codes = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let args = [
            "planar-mk",
            "solve",
            "--input-f",
            fp.to_str().unwrap(),
            "--input-g",
            gp.to_str().unwrap(),
            "--config",
            cp.to_str().unwrap(),
            "--seed",
            "42",
            "--out-dir",
            out.to_str().unwrap(),
        ];
        codes.push(planar_mk::cli::run(args));
        let text = std::fs::read_to_string(out.join("report.json")).unwrap();
        reports.push(serde_json::to_string(&strip_timing(&text)).unwrap());
    }
    let identical = reports[0] == reports[1];
    check(
        worst < 1e-9 && identical && codes.iter().all(|&c| c == 0),
        format!(
            "max marginal L1 error over all iterates = {worst:.1e}; repeated seeded runs identical: {identical}"
        ),
    )
}

type Criterion = Box<dyn FnMut(&mut Vec<Solved>) -> Outcome>;

fn main() {
    let mut solved = Vec::new();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1D optimality", Box::new(|_| criterion_1())),
        ("pushforward preservation", Box::new(|_| criterion_2())),
        ("gradient correctness", Box::new(|_| criterion_3())),
        ("reduction equivalence", Box::new(criterion_4)),
        ("Euler-Lagrange residual", Box::new(|s| criterion_5(s))),
        ("lemma checkers", Box::new(|_| criterion_6())),
        ("feasibility and determinism", Box::new(|s| criterion_7(s))),
    ];
    let mut failures = 0;
    for (k, (name, mut run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = run(&mut solved);
        let secs = start.elapsed().as_secs_f64();
        if !out.pass {
            failures += 1;
        }
        println!(
            "criterion {} [{}] {name}: {} ({secs:.1} s)",
            k + 1,
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
