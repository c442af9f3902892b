//! Backward induction for the value functions `J_k(u, v)` on the lattice.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::grid::{GridAxes, GridSpec};
use crate::dp::inner::{ChildValue, InnerProblem, InnerResult};
use crate::error::{Error, Result};
use crate::model::{Frictions, LatticeSpec};
use crate::payoff::{markov_adapter, MarkovAdapter, NodeState, PayoffSpec};

/// Largest `n` for which a path-general payoff is solved on the full tree.
pub const FULL_TREE_CUTOFF: usize = 12;

/// Nodes of one time slice and the indices of their successors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeLayer {
    pub k: usize,
    pub states: Vec<NodeState>,
    pub payoffs: Vec<f64>,
    /// Largest payoff on the node or any of its successors.
    pub reach: Vec<f64>,
    /// Optimal-stopping value of the payoff from the node under the lattice probability.
    pub snell: Vec<f64>,
    /// Index of the up / down successor in layer `k + 1` (empty for the last layer).
    pub up_child: Vec<usize>,
    pub down_child: Vec<usize>,
}

/// Builds the recombined node layers `0..=n`.
pub fn build_layers(spec: &LatticeSpec, adapter: &MarkovAdapter) -> Vec<NodeLayer> {
    let mut layers = Vec::with_capacity(spec.n + 1);
    let mut states = vec![adapter.initial()];
    for k in 0..=spec.n {
        let payoffs = states.iter().map(|s| adapter.payoff_of(*s, spec)).collect();
        let mut layer =
            NodeLayer { k, states: states.clone(), payoffs, reach: vec![], snell: vec![], up_child: vec![], down_child: vec![] };
        if k < spec.n {
            let mut next: BTreeMap<NodeState, usize> = BTreeMap::new();
            for s in &states {
                next.insert(adapter.advance(*s, k, true), 0);
                next.insert(adapter.advance(*s, k, false), 0);
            }
            for (i, slot) in next.values_mut().enumerate() {
                *slot = i;
            }
            layer.up_child = states.iter().map(|s| next[&adapter.advance(*s, k, true)]).collect();
            layer.down_child = states.iter().map(|s| next[&adapter.advance(*s, k, false)]).collect();
            states = next.into_keys().collect();
        }
        layers.push(layer);
    }
    for k in (0..=spec.n).rev() {
        let reach = (0..layers[k].states.len())
            .map(|i| {
                let own = layers[k].payoffs[i];
                if k == spec.n {
                    own
                } else {
                    let next = &layers[k + 1].reach;
                    own.max(next[layers[k].up_child[i]]).max(next[layers[k].down_child[i]])
                }
            })
            .collect();
        layers[k].reach = reach;
        let snell = (0..layers[k].states.len())
            .map(|i| {
                let own = layers[k].payoffs[i];
                if k == spec.n {
                    own
                } else {
                    let next = &layers[k + 1].snell;
                    let cont = spec.p_n * next[layers[k].up_child[i]]
                        + (1.0 - spec.p_n) * next[layers[k].down_child[i]];
                    own.max(cont)
                }
            })
            .collect();
        layers[k].snell = snell;
    }
    layers
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Record the optimal transfer at every grid point. Without it cells where
    /// immediate shortfall dominates skip the search.
    pub store_policy: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub nodes: usize,
    pub cells: usize,
    pub searched_cells: usize,
    /// Cells whose optimal successor left the v range and was read by constant extension.
    pub boundary_escapes: usize,
}

/// Sampled value functions (and optionally policies) for every non-terminal node.
#[derive(Debug, Clone)]
pub struct Solution {
    pub spec: LatticeSpec,
    pub payoff: PayoffSpec,
    pub frictions: Frictions,
    pub grid: GridSpec,
    /// `axes[k][node]` for `k < n`.
    pub axes: Vec<Vec<GridAxes>>,
    pub layers: Vec<NodeLayer>,
    /// `values[k][node]`: samples of `J_k` for `k < n`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// `policy[k][node]`: optimal transfer samples, when requested.
    pub policy: Option<Vec<Vec<Vec<f64>>>>,
    pub diagnostics: SolveDiagnostics,
}

/// Sampled value function of one node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueGrid {
    pub k: usize,
    pub state: NodeState,
    pub axes: GridAxes,
    pub samples: Vec<f64>,
}

/// Sampled optimal transfers of one node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Policy {
    pub k: usize,
    pub state: NodeState,
    pub transfers: Vec<f64>,
}

fn adapter_for(spec: &LatticeSpec, payoff: &PayoffSpec) -> Result<MarkovAdapter> {
    match markov_adapter(payoff) {
        Some(a) => Ok(a),
        None if spec.n <= FULL_TREE_CUTOFF => Ok(MarkovAdapter::full_tree(payoff)),
        None => Err(Error::TreeTooLarge { n: spec.n, cutoff: FULL_TREE_CUTOFF }),
    }
}

/// Tolerance for reading a successor just outside the v range.
pub(crate) fn escape_tol(grid: &GridSpec) -> f64 {
    1e-9 * (1.0 + grid.v_max.max(-grid.v_min))
}

fn node_axes(spec: &LatticeSpec, grid: &GridSpec, layers: &[NodeLayer]) -> Result<Vec<Vec<GridAxes>>> {
    layers[..spec.n]
        .iter()
        .map(|layer| {
            layer
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let price = spec.price_at_level(s.level as i64);
                    grid.node_axes(price, layer.payoffs[i], layer.snell[i], layer.reach[i])
                })
                .collect()
        })
        .collect()
}

pub fn solve(
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
    grid: &GridSpec,
    options: SolveOptions,
) -> Result<Solution> {
    fr.validate()?;
    payoff.validate()?;
    grid.validate()?;
    let adapter = adapter_for(spec, payoff)?;
    let layers = build_layers(spec, &adapter);
    let axes = node_axes(spec, grid, &layers)?;
    let n = spec.n;
    let (v_lo, v_hi) = (grid.v_min, grid.v_max);
    let tol = escape_tol(grid);
    let up = 1.0 + spec.b_n;

    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    let mut policy: Option<Vec<Vec<Vec<f64>>>> = options.store_policy.then(|| vec![Vec::new(); n]);
    let mut diagnostics = SolveDiagnostics::default();

    for k in (0..n).rev() {
        let layer = &layers[k];
        let next_payoffs = &layers[k + 1].payoffs;
        let next_values = if k + 1 < n { Some(&values[k + 1]) } else { None };

        let results: Vec<Result<(Vec<f64>, Option<Vec<f64>>, usize, usize)>> = (0..layer.states.len())
            .into_par_iter()
            .map(|node| {
                let child = |idx: usize| match next_values {
                    Some(v) => ChildValue::Grid(&v[idx], &axes[k + 1][idx]),
                    None => ChildValue::Terminal(next_payoffs[idx]),
                };
                let here = &axes[k][node];
                let cells = here.len();
                let problem = InnerProblem {
                    spec,
                    fr,
                    up: child(layer.up_child[node]),
                    down: child(layer.down_child[node]),
                    probes: grid.w_candidates,
                };
                let phi = layer.payoffs[node];
                let mut vals = vec![0.0; cells];
                let mut pol = options.store_policy.then(|| vec![0.0; cells]);
                let mut searched = 0;
                let mut escapes = 0;
                let mut scratch = Vec::with_capacity(512);
                for (iu, &u) in here.u.iter().enumerate() {
                    let shortfall = (phi - u).max(0.0);
                    for (iv, &v) in here.v.iter().enumerate() {
                        let idx = here.index(iu, iv);
                        if pol.is_none() && problem.flat_value(u, v) <= shortfall {
                            vals[idx] = shortfall;
                            continue;
                        }
                        searched += 1;
                        let InnerResult { value, w, .. } = problem.minimize_with(u, v, &mut scratch);
                        vals[idx] = shortfall.max(value);
                        if let Some(p) = pol.as_mut() {
                            p[idx] = w;
                        }
                        // only successors reached from inside the box count as escapes
                        let y = v + w;
                        let reach = y * up;
                        let out = reach > v_hi + tol || y * (1.0 - spec.a_n) < v_lo - tol || reach < v_lo - tol;
                        if out && value > shortfall {
                            let inside = v * up <= v_hi && v * up >= v_lo;
                            if inside && u * up <= grid.u_max {
                                return Err(Error::GridEscape { k, u, v });
                            }
                            escapes += 1;
                        }
                    }
                }
                Ok((vals, pol, searched, escapes))
            })
            .collect();

        let mut layer_values = Vec::with_capacity(results.len());
        let mut layer_policy = Vec::new();
        for r in results {
            let (vals, pol, searched, escapes) = r?;
            diagnostics.searched_cells += searched;
            diagnostics.boundary_escapes += escapes;
            layer_values.push(vals);
            if let Some(p) = pol {
                layer_policy.push(p);
            }
        }
        diagnostics.nodes += layer_values.len();
        diagnostics.cells += layer_values.iter().map(Vec::len).sum::<usize>();
        values[k] = layer_values;
        if let Some(p) = policy.as_mut() {
            p[k] = layer_policy;
        }
    }

    Ok(Solution {
        spec: *spec,
        payoff: *payoff,
        frictions: *fr,
        grid: grid.clone(),
        axes,
        layers,
        values,
        policy,
        diagnostics,
    })
}

impl Solution {
    /// `J_0(x, 0)`, read along the flat row; `x` is clamped into `[0, u_max]`.
    pub fn risk_at(&self, x: f64) -> f64 {
        let u_max = self.grid.u_max;
        if x > u_max || x < 0.0 {
            log::warn!("capital {x} outside [0, {u_max}]; clamped");
        }
        if self.spec.n == 0 {
            return (self.layers[0].payoffs[0] - x).max(0.0);
        }
        let axes = &self.axes[0][0];
        axes.interpolate_flat(&self.values[0][0], x.clamp(0.0, axes.u_max()))
    }

    /// `J_k` of `node` at an arbitrary state, including the terminal layer.
    pub fn value_at(&self, k: usize, node: usize, u: f64, v: f64) -> f64 {
        if k == self.spec.n {
            (self.layers[k].payoffs[node] - u).max(0.0)
        } else {
            self.axes[k][node].interpolate(&self.values[k][node], u, v)
        }
    }

    pub(crate) fn child_value(&self, k: usize, node: usize) -> ChildValue<'_> {
        if k == self.spec.n {
            ChildValue::Terminal(self.layers[k].payoffs[node])
        } else {
            ChildValue::Grid(&self.values[k][node], &self.axes[k][node])
        }
    }

    /// Inner problem at node `node` of layer `k < n`.
    pub fn inner_problem(&self, k: usize, node: usize) -> InnerProblem<'_> {
        let layer = &self.layers[k];
        InnerProblem {
            spec: &self.spec,
            fr: &self.frictions,
            up: self.child_value(k + 1, layer.up_child[node]),
            down: self.child_value(k + 1, layer.down_child[node]),
            probes: self.grid.w_candidates,
        }
    }

    /// Optimal transfer at an exact state, re-optimized against the successor grids.
    pub fn optimal_transfer(&self, k: usize, node: usize, u: f64, v: f64) -> InnerResult {
        self.inner_problem(k, node).minimize(u, v)
    }

    pub fn value_grid(&self, k: usize, node: usize) -> ValueGrid {
        let state = self.layers[k].states[node];
        if k < self.spec.n {
            let axes = self.axes[k][node].clone();
            return ValueGrid { k, state, samples: self.values[k][node].clone(), axes };
        }
        let phi = self.layers[k].payoffs[node];
        let axes = self
            .grid
            .node_axes(self.spec.price_at_level(state.level as i64), phi, phi, phi)
            .expect("grid validated by solve");
        let samples = axes.u.iter().flat_map(|u| std::iter::repeat_n((phi - u).max(0.0), axes.n_v())).collect();
        ValueGrid { k, state, axes, samples }
    }

    pub fn policy_grid(&self, k: usize, node: usize) -> Option<Policy> {
        let policy = self.policy.as_ref()?;
        Some(Policy { k, state: self.layers[k].states[node], transfers: policy[k][node].clone() })
    }

    /// Index of the node reached from the root along `signs`.
    pub fn node_along(&self, signs: &[i8]) -> usize {
        let mut node = 0;
        for (k, &z) in signs.iter().enumerate() {
            let layer = &self.layers[k];
            node = if z > 0 { layer.up_child[node] } else { layer.down_child[node] };
        }
        node
    }
}

/// Optimal-stopping value `max_tau E[Y(tau)]` under the lattice probability.
pub fn snell_value(spec: &LatticeSpec, payoff: &PayoffSpec) -> Result<f64> {
    payoff.validate()?;
    let adapter = adapter_for(spec, payoff)?;
    Ok(build_layers(spec, &adapter)[0].snell[0])
}
