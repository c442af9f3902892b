//! Sampling grids over the portfolio state `(u, v)` and bilinear reads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Frictions, LatticeSpec};
use crate::payoff::{max_payoff, PayoffSpec};

/// Discretization of the state domain `[0, u_max] x [v_min, v_max]`.
///
/// Every node gets its own axes. The u axis of a node ends at 10% above the
/// largest payoff reachable from it, where `J` is exactly zero, and puts all
/// but `u_outer` knots into `[0, u_band * Y]`, `Y` the node's optimal-stopping
/// value. The v axis puts all but `v_outer` knots per side into the band
/// `|v| <= v_band * S`, `S` the node price. Outer knots are spaced
/// geometrically out to the edge.
/// Knots are stretched with `sinh` toward `u = 0` and `v = 0`; a stretch of
/// zero gives uniform spacing. `extra_u` knots are merged into the u axis
/// (the solver inserts the query capital there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub u_max: f64,
    pub n_u: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub n_v: usize,
    pub u_stretch: f64,
    pub v_stretch: f64,
    /// Uniform probe points added to the exact breakpoint search of each cell.
    pub w_candidates: usize,
    pub u_band: f64,
    pub u_outer: usize,
    pub v_band: f64,
    pub v_outer: usize,
    #[serde(default)]
    pub extra_u: Vec<f64>,
}

pub const DEFAULT_N_U: usize = 81;
pub const DEFAULT_N_V: usize = 61;
pub const DEFAULT_U_STRETCH: f64 = 1.0;
pub const DEFAULT_V_STRETCH: f64 = 3.0;
pub const DEFAULT_W_CANDIDATES: usize = 0;
pub const DEFAULT_U_BAND: f64 = 3.0;
pub const DEFAULT_U_OUTER: usize = 12;
pub const DEFAULT_V_BAND: f64 = 1.25;
pub const DEFAULT_V_OUTER: usize = 4;

impl GridSpec {
    /// Instance-dependent default bounds: `u_max` is 10% above the largest
    /// payoff on the lattice and `v` covers the largest position a flat
    /// portfolio of wealth `u_max` can open.
    /// Short lattices have few nodes and get proportionally finer axes.
    pub fn for_instance(spec: &LatticeSpec, payoff: &PayoffSpec, fr: &Frictions) -> Self {
        let factor = if spec.n <= 8 { 2 } else { 1 };
        Self::with_size(spec, payoff, fr, DEFAULT_N_U, DEFAULT_N_V).refined(factor)
    }

    pub fn with_size(spec: &LatticeSpec, payoff: &PayoffSpec, fr: &Frictions, n_u: usize, n_v: usize) -> Self {
        let top = max_payoff(payoff, spec);
        let u_max = if top > 0.0 { 1.1 * top } else { spec.s0 };
        let leverage = (spec.a_n * (1.0 - fr.mu) + fr.lambda + fr.mu).min(1.0);
        let v_max = (u_max / leverage).max(4.0 * spec.s0);
        Self {
            u_max,
            n_u,
            v_min: -v_max,
            v_max,
            n_v,
            u_stretch: DEFAULT_U_STRETCH,
            v_stretch: DEFAULT_V_STRETCH,
            w_candidates: DEFAULT_W_CANDIDATES,
            u_band: DEFAULT_U_BAND,
            u_outer: DEFAULT_U_OUTER,
            v_band: DEFAULT_V_BAND,
            v_outer: DEFAULT_V_OUTER,
            extra_u: Vec::new(),
        }
    }

    /// Same bounds with both point counts scaled, keeping the v axis odd.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_u: (self.n_u - 1) * factor + 1,
            n_v: (self.n_v - 1) * factor + 1,
            ..self.clone()
        }
    }

    pub fn with_extra_u(mut self, knots: impl IntoIterator<Item = f64>) -> Self {
        self.extra_u.extend(knots);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return Err(Error::InvalidParameter("grid u_max must be > 0".into()));
        }
        if !(self.v_min < 0.0 && self.v_max > 0.0) {
            return Err(Error::InvalidParameter("grid must satisfy v_min < 0 < v_max".into()));
        }
        if self.n_u < 2 || self.n_v < 3 {
            return Err(Error::InvalidParameter("grid needs n_u >= 2 and n_v >= 3".into()));
        }
        if !(self.u_stretch >= 0.0 && self.v_stretch >= 0.0) {
            return Err(Error::InvalidParameter("grid stretch must be >= 0".into()));
        }
        if !(self.v_band > 0.0) || self.n_v < 2 * self.v_outer + 3 {
            return Err(Error::InvalidParameter("grid needs v_band > 0 and n_v >= 2 v_outer + 3".into()));
        }
        if !(self.u_band > 0.0) || self.n_u < self.u_outer + 2 {
            return Err(Error::InvalidParameter("grid needs u_band > 0 and n_u >= u_outer + 2".into()));
        }
        Ok(())
    }

    /// Axes of a node with stock price `price`, payoff `payoff`,
    /// optimal-stopping value `scale` and reachable payoffs at most `reach`.
    /// The payoff is a u knot, since `J` has a kink there.
    pub fn node_axes(&self, price: f64, payoff: f64, scale: f64, reach: f64) -> Result<GridAxes> {
        self.validate()?;
        let u_top = if reach > 0.0 { (1.1 * reach).min(self.u_max) } else { self.u_max };
        let u_band = (self.u_band * scale).clamp(0.02 * u_top, u_top);
        let u = self.u_axis(u_top, u_band, &[payoff]);
        let half = (self.n_v - 1) / 2;
        let band = self.v_band * price;
        let mut v = Vec::with_capacity(2 * half + 1);
        let mut neg = self.v_side(-self.v_min, band, half);
        neg.reverse();
        v.extend(neg.iter().map(|x| -x));
        v.push(0.0);
        v.extend(self.v_side(self.v_max, band, half));
        Ok(GridAxes::new(u, v))
    }

    fn u_axis(&self, top: f64, band: f64, pins: &[f64]) -> Vec<f64> {
        let outer = if band < top { self.u_outer } else { 0 };
        let inner = self.n_u - 1 - outer;
        let mut u: Vec<f64> =
            (0..=inner).map(|i| band * stretch(i as f64 / inner as f64, self.u_stretch)).collect();
        u[0] = 0.0;
        u[inner] = band;
        let ratio = top / band;
        u.extend((1..=outer).map(|j| band * ratio.powf(j as f64 / outer as f64)));
        u[self.n_u - 1] = top;
        let pins = || self.extra_u.iter().chain(pins).copied().filter(|x| *x > 0.0 && *x < top);
        u.extend(pins());
        u.sort_by(f64::total_cmp);
        u.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (1.0 + b.abs()));
        // merged knots must not replace the requested ones
        for x in pins() {
            if x > 0.0 && x < top {
                let i = nearest(&u, x);
                u[i] = x;
            }
        }
        u
    }

    /// Positive knots `(0, edge]` of one side of the v axis.
    fn v_side(&self, edge: f64, band: f64, count: usize) -> Vec<f64> {
        let outer = if band < edge { self.v_outer.min(count - 1) } else { 0 };
        let inner = count - outer;
        let band = band.min(edge);
        let mut side: Vec<f64> =
            (1..=inner).map(|j| band * stretch(j as f64 / inner as f64, self.v_stretch)).collect();
        side[inner - 1] = band;
        let ratio = edge / band;
        side.extend((1..=outer).map(|j| band * ratio.powf(j as f64 / outer as f64)));
        side[count - 1] = edge;
        side
    }

    /// Single axes over the whole box, without node-dependent bands.
    pub fn axes(&self) -> Result<GridAxes> {
        self.validate()?;
        let u = self.u_axis(self.u_max, self.u_max, &[]);
        let half = (self.n_v - 1) / 2;
        let mut v = Vec::with_capacity(2 * half + 1);
        for j in (1..=half).rev() {
            v.push(self.v_min * stretch(j as f64 / half as f64, self.v_stretch));
        }
        v.push(0.0);
        for j in 1..=half {
            v.push(self.v_max * stretch(j as f64 / half as f64, self.v_stretch));
        }
        v[0] = self.v_min;
        *v.last_mut().unwrap() = self.v_max;
        Ok(GridAxes::new(u, v))
    }
}

fn stretch(t: f64, c: f64) -> f64 {
    if c == 0.0 || t == 0.0 {
        t
    } else if t == 1.0 {
        1.0
    } else {
        (c * t).sinh() / c.sinh()
    }
}

fn nearest(knots: &[f64], x: f64) -> usize {
    let i = knots.partition_point(|k| *k < x);
    if i == 0 {
        0
    } else if i == knots.len() || (x - knots[i - 1]) < (knots[i] - x) {
        i - 1
    } else {
        i
    }
}

/// Knot vectors of a grid. Samples are stored row-major, `index = iu * n_v + iv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    zero_v: usize,
}

impl GridAxes {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Self {
        let zero_v = v.iter().position(|x| *x == 0.0).unwrap_or(v.len() / 2);
        Self { u, v, zero_v }
    }

    pub fn len(&self) -> usize {
        self.u.len() * self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.u.len()
    }

    pub fn n_v(&self) -> usize {
        self.v.len()
    }

    pub fn u_max(&self) -> f64 {
        *self.u.last().unwrap()
    }

    pub fn v_range(&self) -> (f64, f64) {
        (self.v[0], *self.v.last().unwrap())
    }

    /// Column index of the `v = 0` knot.
    pub fn zero_v(&self) -> usize {
        self.zero_v
    }

    #[inline]
    pub fn index(&self, iu: usize, iv: usize) -> usize {
        iu * self.v.len() + iv
    }

    #[inline]
    fn cell(knots: &[f64], x: f64) -> (usize, f64) {
        let last = knots.len() - 1;
        if x <= knots[0] {
            return (0, 0.0);
        }
        if x >= knots[last] {
            return (last - 1, 1.0);
        }
        let i = knots.partition_point(|k| *k <= x) - 1;
        let i = i.min(last - 1);
        (i, (x - knots[i]) / (knots[i + 1] - knots[i]))
    }

    /// Like `cell`, starting the search from the cell `hint`, which is
    /// updated. Cheap when successive reads move little.
    #[inline]
    fn cell_from(knots: &[f64], x: f64, hint: &mut usize) -> (usize, f64) {
        let last = knots.len() - 1;
        if x <= knots[0] {
            *hint = 0;
            return (0, 0.0);
        }
        if x >= knots[last] {
            *hint = last - 1;
            return (last - 1, 1.0);
        }
        let mut i = (*hint).min(last - 1);
        if x < knots[i] {
            let mut steps = 0;
            while x < knots[i] {
                i -= 1;
                steps += 1;
                if steps == 4 && x < knots[i] {
                    i = knots[..i].partition_point(|k| *k <= x) - 1;
                    break;
                }
            }
        } else if x >= knots[i + 1] {
            let mut steps = 0;
            while x >= knots[i + 1] {
                i += 1;
                steps += 1;
                if steps == 4 && x >= knots[i + 1] {
                    i = i + knots[i + 1..].partition_point(|k| *k <= x);
                    break;
                }
            }
        }
        *hint = i;
        (i, (x - knots[i]) / (knots[i + 1] - knots[i]))
    }

    /// Bilinear read with constant extension outside the box.
    #[inline]
    pub fn interpolate(&self, values: &[f64], u: f64, v: f64) -> f64 {
        let (iu, tu) = Self::cell(&self.u, u);
        let (iv, tv) = Self::cell(&self.v, v);
        self.blend(values, iu, tu, iv, tv)
    }

    /// `interpolate` with a cell cursor `(iu, iv)` carried between reads.
    #[inline]
    pub fn interpolate_near(&self, values: &[f64], u: f64, v: f64, cursor: &mut (usize, usize)) -> f64 {
        let (iu, tu) = Self::cell_from(&self.u, u, &mut cursor.0);
        let (iv, tv) = Self::cell_from(&self.v, v, &mut cursor.1);
        self.blend(values, iu, tu, iv, tv)
    }

    #[inline]
    fn blend(&self, values: &[f64], iu: usize, tu: f64, iv: usize, tv: f64) -> f64 {
        let nv = self.v.len();
        let base = iu * nv + iv;
        let v00 = values[base];
        let v01 = values[base + 1];
        let v10 = values[base + nv];
        let v11 = values[base + nv + 1];
        let lo = if tv == 0.0 { v00 } else { v00 + tv * (v01 - v00) };
        let hi = if tv == 0.0 { v10 } else { v10 + tv * (v11 - v10) };
        if tu == 0.0 {
            lo
        } else {
            lo + tu * (hi - lo)
        }
    }

    /// Linear read along the `v = 0` row.
    pub fn interpolate_flat(&self, values: &[f64], u: f64) -> f64 {
        let (iu, tu) = Self::cell(&self.u, u);
        let a = values[self.index(iu, self.zero_v)];
        let b = values[self.index(iu + 1, self.zero_v)];
        if tu == 0.0 {
            a
        } else {
            a + tu * (b - a)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec {
            u_max: 2.0,
            n_u: 11,
            v_min: -3.0,
            v_max: 5.0,
            n_v: 9,
            u_stretch: 2.0,
            v_stretch: 3.0,
            w_candidates: 0,
            u_band: 3.0,
            u_outer: 3,
            v_band: 2.0,
            v_outer: 2,
            extra_u: vec![0.123, 7.0],
        }
    }

    #[test]
    fn axes_contain_anchors() {
        let axes = spec().axes().unwrap();
        assert_eq!(axes.u[0], 0.0);
        assert_eq!(axes.u_max(), 2.0);
        assert!(axes.u.contains(&0.123));
        assert!(axes.u.windows(2).all(|w| w[0] < w[1]));
        assert!(axes.v.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(axes.v[axes.zero_v()], 0.0);
        assert_eq!(axes.v_range(), (-3.0, 5.0));
    }

    #[test]
    fn cursor_reads_match_plain_reads() {
        let axes = spec().node_axes(0.7, 0.0, 0.1, 1.5).unwrap();
        let vals: Vec<f64> = (0..axes.len()).map(|i| ((i * 7919) % 101) as f64 / 13.0).collect();
        let mut cursor = (0, 0);
        let mut x = 0.37f64;
        for _ in 0..500 {
            x = (x * 3.9 * (1.0 - x)).clamp(0.0, 1.0);
            let (u, v) = (2.2 * x - 0.1, 9.0 * x - 3.5);
            assert_eq!(axes.interpolate_near(&vals, u, v, &mut cursor), axes.interpolate(&vals, u, v));
        }
    }

    #[test]
    fn node_axes_concentrate_in_band() {
        let g = spec();
        let axes = g.node_axes(0.5, 0.0, 0.1, 1.0).unwrap();
        assert_eq!(axes.u_max(), 1.1);
        // 11 knots plus the merged extra one
        assert_eq!(axes.n_u(), 12);
        assert!(axes.u.iter().any(|u| (u - 0.3).abs() < 1e-15));
        assert!(axes.u.windows(2).all(|w| w[0] < w[1]));
        assert!(axes.u.contains(&0.123));
        assert_eq!(axes.v_range(), (-3.0, 5.0));
        assert_eq!(axes.n_v(), 9);
        assert_eq!(axes.v[axes.zero_v()], 0.0);
        assert!(axes.v.windows(2).all(|w| w[0] < w[1]));
        assert!(axes.v.contains(&1.0) && axes.v.contains(&-1.0));
        // band wider than the box falls back to the box
        let wide = g.node_axes(10.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(wide.u_max(), 2.0);
        assert_eq!(wide.v_range(), (-3.0, 5.0));
        assert!(wide.v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bilinear_reproduces_affine_functions() {
        let axes = spec().axes().unwrap();
        let f = |u: f64, v: f64| 0.3 - 1.7 * u + 0.25 * v;
        let mut vals = vec![0.0; axes.len()];
        for (iu, u) in axes.u.iter().enumerate() {
            for (iv, v) in axes.v.iter().enumerate() {
                vals[axes.index(iu, iv)] = f(*u, *v);
            }
        }
        for &(u, v) in &[(0.0, 0.0), (0.05, -2.9), (1.3, 4.1), (2.0, 5.0), (0.123, 0.7)] {
            assert!((axes.interpolate(&vals, u, v) - f(u, v)).abs() < 1e-12);
        }
        // constant extension
        assert!((axes.interpolate(&vals, 3.0, 0.0) - f(2.0, 0.0)).abs() < 1e-12);
        assert!((axes.interpolate_flat(&vals, 0.7) - f(0.7, 0.0)).abs() < 1e-12);
    }
}
