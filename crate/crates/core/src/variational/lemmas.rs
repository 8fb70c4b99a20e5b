//! Numerical limit checkers for the square-average and rectangle-bump
//! lemmas behind the first-order condition.

use serde::Serialize;

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Errors below this are treated as roundoff when fitting the order.
const ROUNDOFF_FLOOR: f64 = 1e-9;

/// Values of a quotient along a sequence of parameters shrinking to zero.
#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub parameters: Vec<f64>,
    pub values: Vec<f64>,
    /// Polynomial extrapolation of `values` to parameter zero.
    pub limit: f64,
    /// Independent evaluation of the expected limit.
    pub reference: f64,
    pub abs_error: f64,
    /// Log-log slope of `|value - reference|` against the parameter;
    /// `None` when the errors are at roundoff level.
    pub observed_order: Option<f64>,
    pub expected_order: f64,
}

impl LimitReport {
    fn build(parameters: Vec<f64>, values: Vec<f64>, reference: f64, expected_order: f64) -> Self {
        let limit = extrapolate_to_zero(&parameters, &values);
        let observed_order = observed_order(&parameters, &values, reference);
        Self {
            abs_error: (limit - reference).abs(),
            parameters,
            values,
            limit,
            reference,
            observed_order,
            expected_order,
        }
    }

    /// True when the order is undetermined or within `tol` of the expected one.
    pub fn order_ok(&self, tol: f64) -> bool {
        self.observed_order
            .is_none_or(|o| (o - self.expected_order).abs() <= tol)
    }
}

/// Parameters of the nested limit `eps -> 0`, `a1 -> a`, `b1 -> b`:
/// `b1 - b = delta`, `a1 - a = theta * delta`, `eps = theta * (a1 - a)`,
/// with `delta = delta0 * 2^-k` for `k < levels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma2Schedule {
    pub theta: f64,
    pub delta0: f64,
    pub levels: usize,
}

impl Default for Lemma2Schedule {
    fn default() -> Self {
        Self {
            theta: 0.1,
            delta0: 0.1,
            levels: 7,
        }
    }
}

/// `1e-2 * 2^-k` for `k = 0..=6`.
pub fn default_eps_sequence() -> Vec<f64> {
    (0..7).map(|k| 1e-2 * 0.5_f64.powi(k)).collect()
}

/// Mean of `beta` over `[x0, x0 + h] x [y0, y0 + h]`.
fn square_average(beta: &dyn Fn(f64, f64) -> f64, x0: f64, y0: f64, h: f64) -> f64 {
    let mut acc = 0.0;
    for (xi, wi) in GL_NODES.iter().zip(GL_WEIGHTS) {
        let x = x0 + 0.5 * h * (1.0 + xi);
        for (yj, wj) in GL_NODES.iter().zip(GL_WEIGHTS) {
            acc += wi * wj * beta(x, y0 + 0.5 * h * (1.0 + yj));
        }
    }
    0.25 * acc
}

/// Neville evaluation at zero of the interpolating polynomial.
fn extrapolate_to_zero(h: &[f64], v: &[f64]) -> f64 {
    let mut p = v.to_vec();
    let n = p.len();
    for m in 1..n {
        for i in 0..n - m {
            p[i] = (h[i + m] * p[i] - h[i] * p[i + 1]) / (h[i + m] - h[i]);
        }
    }
    p[0]
}

fn observed_order(h: &[f64], v: &[f64], reference: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(v)
        .map(|(h, v)| (h, (v - reference).abs()))
        .filter(|(_, e)| *e > ROUNDOFF_FLOOR)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// `(1/eps^2) int int beta` over `[a, a+eps] x [b, b+eps]` for each `eps`,
/// extrapolated to `eps = 0` and compared with `beta(a, b)`.
pub fn lemma1_checker(
    beta: &dyn Fn(f64, f64) -> f64,
    a: f64,
    b: f64,
    eps_sequence: &[f64],
) -> LimitReport {
    let values = eps_sequence
        .iter()
        .map(|&e| square_average(beta, a, b, e))
        .collect();
    LimitReport::build(eps_sequence.to_vec(), values, beta(a, b), 1.0)
}

/// Mixed derivative by central differences with one Richardson step.
pub fn mixed_derivative_fd(beta: &dyn Fn(f64, f64) -> f64, a: f64, b: f64) -> f64 {
    let d = |h: f64| {
        (beta(a + h, b + h) - beta(a + h, b - h) - beta(a - h, b + h) + beta(a - h, b - h))
            / (4.0 * h * h)
    };
    let h = 1e-2;
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// `int int beta eta / (eps^2 (a1 - a)(b1 - b))` for the rectangle bump
/// `eta` along `schedule`, extrapolated and compared with a finite-difference
/// `beta_xy(a, b)`. The reported parameters are `b1 - b`.
pub fn lemma2_checker(
    beta: &dyn Fn(f64, f64) -> f64,
    a: f64,
    b: f64,
    schedule: &Lemma2Schedule,
) -> LimitReport {
    let mut parameters = Vec::with_capacity(schedule.levels);
    let mut values = Vec::with_capacity(schedule.levels);
    for k in 0..schedule.levels {
        let delta = schedule.delta0 * 0.5_f64.powi(k as i32);
        let dx = schedule.theta * delta;
        let eps = schedule.theta * dx;
        let (a1, b1) = (a + dx, b + delta);
        let bump = square_average(beta, a1, b1, eps)
            - square_average(beta, a1, b, eps)
            - square_average(beta, a, b1, eps)
            + square_average(beta, a, b, eps);
        parameters.push(delta);
        values.push(bump / (dx * delta));
    }
    LimitReport::build(parameters, values, mixed_derivative_fd(beta, a, b), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_average_is_exact() {
        let r = lemma1_checker(&|_, _| 1.0, 0.3, 0.4, &default_eps_sequence());
        assert!(r.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(r.observed_order.is_none());
    }

    #[test]
    fn linear_average_is_eps() {
        let r = lemma1_checker(&|x, y| x + y, 0.0, 0.0, &default_eps_sequence());
        for (e, v) in r.parameters.iter().zip(&r.values) {
            assert!((v - e).abs() < 1e-15);
        }
        assert!(r.abs_error < 1e-14);
        assert!((r.observed_order.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bilinear_bump_is_identically_one() {
        let r = lemma2_checker(&|x, y| x * y, 0.3, 0.6, &Lemma2Schedule::default());
        assert!(r.values.iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!((r.limit - 1.0).abs() < 1e-6);
    }

    #[test]
    fn neville_recovers_polynomial() {
        let h = [0.4, 0.2, 0.1, 0.05];
        let v: Vec<f64> = h.iter().map(|h| 3.0 - 2.0 * h + 5.0 * h * h * h).collect();
        assert!((extrapolate_to_zero(&h, &v) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fd_mixed_derivative() {
        let d = mixed_derivative_fd(&|x: f64, y: f64| (x * y).sin(), 0.4, 0.9);
        let exact = (0.36_f64).cos() - 0.36 * (0.36_f64).sin();
        assert!((d - exact).abs() < 1e-8);
    }
}
