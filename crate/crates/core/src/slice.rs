//! One-dimensional slices of the reduced functional.
//!
//! A slice pairs the conditional law of the coupling along one line (atoms at
//! cell centres with masses taken from `p`) with the fixed conditional law of
//! the target density along the same line. Levels are in mass units, so the
//! slice cost is `r * W2^2` of the normalised conditionals, `r` the slice mass.

use crate::measures::quantile_on_knots;

/// Target conditional law as quantile knots `(level, value)` in mass units.
///
/// With `bridge == 0` the quantile is the left-continuous step function of
/// the atoms. With `bridge > 0` each jump between atoms `l` and `l + 1` is
/// replaced by a linear ramp of level width `bridge * min(m_l, m_{l+1})`
/// centred on the cumulative mass `d_l`, which makes the slice cost C^1.
#[derive(Debug, Clone)]
pub(crate) struct SliceTarget {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl SliceTarget {
    pub(crate) fn new(positions: &[f64], masses: &[f64], bridge: f64) -> Self {
        let n = positions.len();
        let mut levels = Vec::with_capacity(2 * n);
        let mut values = Vec::with_capacity(2 * n);
        levels.push(0.0);
        values.push(positions[0]);
        let mut d = 0.0;
        for l in 0..n - 1 {
            d += masses[l];
            let half = 0.5 * bridge * masses[l].min(masses[l + 1]);
            levels.push(d - half);
            values.push(positions[l]);
            levels.push(d + half);
            values.push(positions[l + 1]);
        }
        d += masses[n - 1];
        levels.push(d.max(levels[levels.len() - 1]));
        values.push(positions[n - 1]);
        Self { levels, values }
    }

    /// Quantile at mass level `s` (left-continuous, clamped at both ends).
    pub(crate) fn at(&self, s: f64) -> f64 {
        quantile_on_knots(&self.levels, &self.values, s)
    }

    /// Quantile at `s`, except that a level within `tol` of a jump returns
    /// the midpoint of the jump.
    pub(crate) fn at_centered(&self, s: f64, tol: f64) -> f64 {
        let lv = &self.levels;
        let k = lv.partition_point(|&p| p < s - tol);
        if k < lv.len() && (lv[k] - s).abs() <= tol {
            let mut k2 = k;
            while k2 + 1 < lv.len() && lv[k2 + 1] == lv[k] {
                k2 += 1;
            }
            if k2 > k {
                return 0.5 * (self.values[k] + self.values[k2]);
            }
        }
        self.at(s)
    }
}

/// Calls `visit(k, a, b, qa, qb)` for every maximal level interval `(a, b]`
/// on which the source atom `k` is active and the target quantile is linear,
/// with `qa`, `qb` its one-sided values at the ends.
fn walk(masses: &[f64], target: &SliceTarget, mut visit: impl FnMut(usize, f64, f64, f64, f64)) {
    let lv = &target.levels;
    let vv = &target.values;
    let nseg = lv.len() - 1;
    let last = vv[nseg];
    let mut seg = 0;
    let mut a = 0.0;
    let mut c = 0.0;
    for (k, &m) in masses.iter().enumerate() {
        c += m;
        while a < c {
            while seg < nseg && lv[seg + 1] <= a {
                seg += 1;
            }
            if seg == nseg {
                visit(k, a, c, last, last);
                a = c;
            } else {
                let b = c.min(lv[seg + 1]);
                let (l0, l1) = (lv[seg], lv[seg + 1]);
                let slope = (vv[seg + 1] - vv[seg]) / (l1 - l0);
                let qa = vv[seg] + (a - l0) * slope;
                let qb = vv[seg] + (b - l0) * slope;
                visit(k, a, b, qa, qb);
                a = b;
            }
        }
    }
}

/// `int (Q_p(s) - Q_target(s))^2 ds` over the source levels.
pub(crate) fn slice_cost(positions: &[f64], masses: &[f64], target: &SliceTarget) -> f64 {
    let mut cost = 0.0;
    walk(masses, target, |k, a, b, qa, qb| {
        let (ea, eb) = (positions[k] - qa, positions[k] - qb);
        cost += (b - a) * (ea * ea + ea * eb + eb * eb) / 3.0;
    });
    cost
}

/// Per source atom: `(int Q ds, int Q^2 ds)` over its level interval.
pub(crate) fn slice_moments(masses: &[f64], target: &SliceTarget) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); masses.len()];
    walk(masses, target, |k, a, b, qa, qb| {
        out[k].0 += (b - a) * 0.5 * (qa + qb);
        out[k].1 += (b - a) * (qa * qa + qa * qb + qb * qb) / 3.0;
    });
    out
}

/// Target quantile at the upper level `c_k` of every source atom.
pub(crate) fn slice_upper_quantiles(masses: &[f64], target: &SliceTarget) -> Vec<f64> {
    let mut c = 0.0;
    masses
        .iter()
        .map(|&m| {
            c += m;
            target.at(c)
        })
        .collect()
}

/// Derivative of [`slice_cost`] with respect to each source mass, written as
/// the first-variation kernel: the pointwise square `(y_m - q_m)^2` plus the
/// tail sum over later atoms of `2 (y_k - qbar_k)(-(q_k - q_{k-1}))`, where
/// `q_k` is the target quantile at the atom's upper level and
/// `q_k - q_{k-1}` the increment of the quantile across the atom.
pub(crate) fn slice_gradient(
    positions: &[f64],
    masses: &[f64],
    target: &SliceTarget,
    out: &mut [f64],
) {
    let q = slice_upper_quantiles(masses, target);
    let mut tail = 0.0;
    for k in (0..masses.len()).rev() {
        let e = positions[k] - q[k];
        out[k] = e * e + tail;
        if k > 0 {
            let dq = q[k] - q[k - 1];
            let qbar = 0.5 * (q[k] + q[k - 1]);
            tail += 2.0 * (positions[k] - qbar) * (-dq);
        }
    }
}
