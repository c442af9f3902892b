//! One-step minimization over admissible transfers.
//!
//! Along the segment of transfers `w`, each successor state
//! `(G(u, v, w, rho), rho (v + w))` moves affinely between the kinks `w = 0`
//! and `w = -v`. A bilinear interpolant restricted to an affine segment is a
//! quadratic inside every grid cell, so the objective is piecewise quadratic
//! with breakpoints where the successor crosses a grid line. Enumerating
//! those breakpoints, plus the vertex of every convex piece, gives the exact
//! minimum of the interpolated objective.

use crate::dp::grid::GridAxes;
use crate::friction::{interval_unchecked, wealth_step, TransferInterval};
use crate::model::{Frictions, LatticeSpec};

/// Value function of a successor node.
#[derive(Debug, Clone, Copy)]
pub enum ChildValue<'a> {
    /// Terminal node: `(payoff - u)^+`.
    Terminal(f64),
    /// Samples of the value function on the node's own axes.
    Grid(&'a [f64], &'a GridAxes),
}

impl ChildValue<'_> {
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match *self {
            ChildValue::Terminal(phi) => (phi - u).max(0.0),
            ChildValue::Grid(values, axes) => axes.interpolate(values, u, v),
        }
    }

    #[inline]
    fn eval_near(&self, u: f64, v: f64, cursor: &mut (usize, usize)) -> f64 {
        match *self {
            ChildValue::Terminal(phi) => (phi - u).max(0.0),
            ChildValue::Grid(values, axes) => axes.interpolate_near(values, u, v, cursor),
        }
    }
}

type Cursors = [(usize, usize); 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerResult {
    pub value: f64,
    pub w: f64,
    pub interval: TransferInterval,
}

/// Everything fixed while minimizing over `w` at one state.
#[derive(Clone, Copy)]
pub struct InnerProblem<'a> {
    pub spec: &'a LatticeSpec,
    pub fr: &'a Frictions,
    pub up: ChildValue<'a>,
    pub down: ChildValue<'a>,
    pub probes: usize,
}

const TIE_TOL: f64 = 1e-12;

impl<'a> InnerProblem<'a> {
    #[inline]
    pub fn objective(&self, u: f64, v: f64, w: f64) -> f64 {
        let p = self.spec.p_n;
        let up = 1.0 + self.spec.b_n;
        let down = 1.0 - self.spec.a_n;
        let y = v + w;
        let ju = self.up.eval(wealth_step(u, v, w, up, self.fr).max(0.0), y * up);
        let jd = self.down.eval(wealth_step(u, v, w, down, self.fr).max(0.0), y * down);
        p * ju + (1.0 - p) * jd
    }

    #[inline]
    fn objective_near(&self, u: f64, v: f64, w: f64, cursors: &mut Cursors) -> f64 {
        let p = self.spec.p_n;
        let up = 1.0 + self.spec.b_n;
        let down = 1.0 - self.spec.a_n;
        let y = v + w;
        let ju = self.up.eval_near(wealth_step(u, v, w, up, self.fr).max(0.0), y * up, &mut cursors[0]);
        let jd = self.down.eval_near(wealth_step(u, v, w, down, self.fr).max(0.0), y * down, &mut cursors[1]);
        p * ju + (1.0 - p) * jd
    }

    /// Value of liquidating to a flat position.
    #[inline]
    pub fn flat_value(&self, u: f64, v: f64) -> f64 {
        self.objective(u, v, -v)
    }

    pub fn interval(&self, u: f64, v: f64) -> TransferInterval {
        interval_unchecked(u, v, self.spec.a_n, self.spec.b_n, self.fr)
    }

    /// Minimum of the mixture over the admissible interval; among minimizers
    /// the transfer closest to a flat position wins.
    pub fn minimize(&self, u: f64, v: f64) -> InnerResult {
        self.minimize_with(u, v, &mut Vec::new())
    }

    /// `minimize` reusing `points` as scratch space.
    pub fn minimize_with(&self, u: f64, v: f64, points: &mut Vec<f64>) -> InnerResult {
        let interval = self.interval(u, v);
        let flat = self.flat_value(u, v);
        if flat <= 0.0 {
            return InnerResult { value: 0.0, w: -v, interval };
        }
        points.clear();
        self.breakpoints(u, v, interval, points);
        points.sort_by(f64::total_cmp);
        points.dedup();

        let mut best_value = flat;
        let mut best_w = -v;
        let consider = |w: f64, f: f64, best_value: &mut f64, best_w: &mut f64| {
            let tol = TIE_TOL * (1.0 + best_value.abs());
            if f < *best_value - tol
                || (f <= *best_value + tol && (v + w).abs() < (v + *best_w).abs())
            {
                if f < *best_value {
                    *best_value = f;
                }
                *best_w = w;
            }
        };

        let mut cursors = [(0, 0); 2];
        let mut prev: Option<(f64, f64)> = None;
        for &w in points.iter() {
            let f = self.objective_near(u, v, w, &mut cursors);
            consider(w, f, &mut best_value, &mut best_w);
            if let Some((w0, f0)) = prev {
                if w - w0 > 1e-15 * (1.0 + w.abs()) {
                    let mid = 0.5 * (w0 + w);
                    let fm = self.objective_near(u, v, mid, &mut cursors);
                    consider(mid, fm, &mut best_value, &mut best_w);
                    let curvature = f0 - 2.0 * fm + f;
                    if curvature > 1e-14 * (1.0 + fm.abs()) {
                        let h = 0.5 * (w - w0);
                        let vertex = mid + h * (f0 - f) / (2.0 * curvature);
                        if vertex > w0 && vertex < w {
                            let fv = self.objective_near(u, v, vertex, &mut cursors);
                            consider(vertex, fv, &mut best_value, &mut best_w);
                        }
                    }
                }
            }
            prev = Some((w, f));
        }
        InnerResult { value: best_value.max(0.0), w: best_w, interval }
    }

    fn breakpoints(&self, u: f64, v: f64, iv: TransferInterval, out: &mut Vec<f64>) {
        out.push(iv.lo);
        out.push(iv.hi);
        out.push(iv.clamp(-v));
        if iv.contains(0.0) {
            out.push(0.0);
        }
        if self.probes > 1 && iv.width() > 0.0 {
            let step = iv.width() / (self.probes - 1) as f64;
            out.extend((0..self.probes).map(|i| iv.lo + step * i as f64));
        }
        if iv.width() <= 0.0 {
            return;
        }
        let mut kinks = [iv.lo, iv.hi, iv.hi, iv.hi];
        let mut m = 1;
        for k in [0.0f64.min(-v), 0.0f64.max(-v)] {
            if k > iv.lo && k < iv.hi {
                kinks[m] = k;
                m += 1;
            }
        }
        kinks[m] = iv.hi;
        for (child, rho) in [(self.up, 1.0 + self.spec.b_n), (self.down, 1.0 - self.spec.a_n)] {
            for piece in kinks[..=m].windows(2) {
                let (w0, w1) = (piece[0], piece[1]);
                if w1 <= w0 {
                    continue;
                }
                let g0 = wealth_step(u, v, w0, rho, self.fr);
                let g1 = wealth_step(u, v, w1, rho, self.fr);
                match child {
                    ChildValue::Terminal(phi) => crossings(w0, w1, g0, g1, std::slice::from_ref(&phi), out),
                    ChildValue::Grid(_, axes) => {
                        crossings(w0, w1, g0, g1, &axes.u, out);
                        crossings(w0, w1, rho * (v + w0), rho * (v + w1), &axes.v, out);
                    }
                }
            }
        }
    }
}

/// Transfers in `[w0, w1]` at which an affine coordinate running from `c0`
/// to `c1` meets one of the sorted `knots`.
#[inline]
fn crossings(w0: f64, w1: f64, c0: f64, c1: f64, knots: &[f64], out: &mut Vec<f64>) {
    if c0 == c1 {
        return;
    }
    let (lo, hi) = if c0 < c1 { (c0, c1) } else { (c1, c0) };
    let start = knots.partition_point(|k| *k <= lo);
    let end = knots.partition_point(|k| *k < hi);
    let slope = (w1 - w0) / (c1 - c0);
    for &knot in &knots[start..end] {
        out.push(w0 + (knot - c0) * slope);
    }
}

/// Public entry point: minimize the expected successor value at `(u, v)`.
pub fn inner_min(
    u: f64,
    v: f64,
    spec: &LatticeSpec,
    fr: &Frictions,
    up: ChildValue<'_>,
    down: ChildValue<'_>,
) -> InnerResult {
    InnerProblem { spec, fr, up, down, probes: 0 }.minimize(u, v)
}
