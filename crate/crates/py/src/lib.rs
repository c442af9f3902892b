//! Python bindings. A `Problem` bundles market, frictions and payoff; its
//! methods solve, simulate and cross-check on the n-step lattice.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use shortfall_core::dp::{self, GridSpec, SolveOptions};
use shortfall_core::embed::{self, SimConfig};
use shortfall_core::error::Error;
use shortfall_core::model::{calibrate, Frictions, LatticeSpec, MarketParams};
use shortfall_core::payoff::{PayoffKind, PayoffSpec};

fn py_err(err: Error) -> PyErr {
    match err {
        Error::InvalidParameter(_) | Error::Config(_) | Error::TreeTooLarge { .. } | Error::LengthMismatch { .. } => {
            PyValueError::new_err(err.to_string())
        }
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_bound_py_any(py)?,
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_bound_py_any(py)?,
            None => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py)?,
        },
        Value::String(s) => s.into_bound_py_any(py)?,
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialized<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &json)
}

#[pyclass(frozen)]
struct Problem {
    market: MarketParams,
    frictions: Frictions,
    payoff: PayoffSpec,
}

impl Problem {
    fn lattice(&self, n: usize) -> PyResult<LatticeSpec> {
        calibrate(&self.market, n).map_err(py_err)
    }

    fn grid(&self, spec: &LatticeSpec, grid_u: Option<usize>, grid_v: Option<usize>) -> GridSpec {
        let base = GridSpec::for_instance(spec, &self.payoff, &self.frictions);
        GridSpec::with_size(
            spec,
            &self.payoff,
            &self.frictions,
            grid_u.unwrap_or(base.n_u),
            grid_v.unwrap_or(base.n_v),
        )
    }

    fn solution(
        &self,
        spec: &LatticeSpec,
        xs: &[f64],
        grid_u: Option<usize>,
        grid_v: Option<usize>,
    ) -> PyResult<dp::Solution> {
        let grid = self.grid(spec, grid_u, grid_v).with_extra_u(xs.iter().copied());
        dp::solve(spec, &self.payoff, &self.frictions, &grid, SolveOptions::default()).map_err(py_err)
    }
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (
        payoff = "call", strike = 1.0, cap = None, level = 0.0,
        s0 = 1.0, sigma = 0.2, kappa = 0.0, maturity = 1.0, lam = 0.01, mu = 0.01,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        payoff: &str,
        strike: f64,
        cap: Option<f64>,
        level: f64,
        s0: f64,
        sigma: f64,
        kappa: f64,
        maturity: f64,
        lam: f64,
        mu: f64,
    ) -> PyResult<Self> {
        let kind: PayoffKind = payoff.parse().map_err(py_err)?;
        let payoff = match kind {
            PayoffKind::Call => PayoffSpec::call(strike),
            PayoffKind::Put => PayoffSpec::put(strike),
            PayoffKind::CappedCall => match cap {
                Some(c) => PayoffSpec::capped_call(strike, c),
                None => return Err(PyValueError::new_err("capped-call needs cap")),
            },
            PayoffKind::LookbackMax => PayoffSpec::lookback_max(),
            PayoffKind::Russian => PayoffSpec::russian(),
            PayoffKind::Constant => PayoffSpec::constant(level),
        };
        payoff.validate().map_err(py_err)?;
        Ok(Self {
            market: MarketParams::new(s0, sigma, kappa, maturity).map_err(py_err)?,
            frictions: Frictions::new(lam, mu).map_err(py_err)?,
            payoff,
        })
    }

    /// Calibrated lattice quantities as a dict.
    fn calibrate<'py>(&self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyAny>> {
        serialized(py, &self.lattice(n)?)
    }

    fn snell_value(&self, n: usize) -> PyResult<f64> {
        dp::snell_value(&self.lattice(n)?, &self.payoff).map_err(py_err)
    }

    #[pyo3(signature = (x, n, grid_u = None, grid_v = None))]
    fn shortfall_risk(&self, x: f64, n: usize, grid_u: Option<usize>, grid_v: Option<usize>) -> PyResult<f64> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(PyValueError::new_err("x must be >= 0"));
        }
        let spec = self.lattice(n)?;
        Ok(self.solution(&spec, &[x], grid_u, grid_v)?.risk_at(x))
    }

    /// `[(x, R_n(x))]` from a single solve.
    #[pyo3(signature = (xs, n, grid_u = None, grid_v = None))]
    fn risk_curve(
        &self,
        xs: Vec<f64>,
        n: usize,
        grid_u: Option<usize>,
        grid_v: Option<usize>,
    ) -> PyResult<Vec<(f64, f64)>> {
        if xs.windows(2).any(|w| w[1] < w[0]) || xs.iter().any(|x| !(*x >= 0.0)) {
            return Err(PyValueError::new_err("xs must be sorted and >= 0"));
        }
        let spec = self.lattice(n)?;
        Ok(dp::curve_from(&self.solution(&spec, &xs, grid_u, grid_v)?, &xs).points)
    }

    /// Brute-force minimal risk, n <= 3.
    #[pyo3(signature = (x, n, w_grid = 100))]
    fn oracle(&self, x: f64, n: usize, w_grid: usize) -> PyResult<f64> {
        let spec = self.lattice(n)?;
        Ok(dp::oracle_bruteforce(&spec, &self.payoff, &self.frictions, x, w_grid).map_err(py_err)?.risk)
    }

    /// Embedding diagnostics rows for each n in `n_list`, `200 n` fine steps each.
    #[pyo3(signature = (n_list, paths, seed))]
    fn diagnostics<'py>(
        &self,
        py: Python<'py>,
        n_list: Vec<usize>,
        paths: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut rows = Vec::new();
        for n in n_list {
            let cfg = SimConfig::for_steps(&self.market, n, paths, seed);
            rows.extend(embed::convergence_diagnostics(&self.market, &self.payoff, &[n], &cfg).map_err(py_err)?);
        }
        serialized(py, &rows)
    }

    /// Lifts the optimal n-step strategy from capital `x` into simulated paths.
    #[pyo3(signature = (x, n, paths, seed))]
    fn shortfall_bracket<'py>(
        &self,
        py: Python<'py>,
        x: f64,
        n: usize,
        paths: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = self.lattice(n)?;
        let sol = self.solution(&spec, &[x], None, None)?;
        let tree = dp::extract_tree(&sol, x).map_err(py_err)?;
        let cfg = SimConfig::for_steps(&self.market, n, paths, seed);
        serialized(py, &embed::shortfall_bracket(x, &sol, &tree, &self.market, &cfg).map_err(py_err)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(payoff={:?}, sigma={}, kappa={}, lam={}, mu={})",
            self.payoff.kind, self.market.sigma, self.market.kappa, self.frictions.lambda, self.frictions.mu
        )
    }
}

#[pymodule]
fn shortfall_hedging(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add("ORACLE_MAX_STEPS", dp::ORACLE_MAX_STEPS)?;
    Ok(())
}
