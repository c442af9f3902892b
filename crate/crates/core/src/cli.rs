//! Command-line front end.
//!
//! Settings resolve as command-line flag, then config file (JSON, from
//! `--config` or `SHORTFALL_CONFIG`), then built-in default. Every output
//! carries the resolved configuration and a format version.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid configuration,
//! 3 grid escape.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dp::{
    curve_from, extract_strategy, extract_tree, oracle_bruteforce, report_from, snell_value, solve, GridSpec, SolveOptions,
    ORACLE_MAX_STEPS,
};
use crate::embed::{convergence_diagnostics, shortfall_bracket, SimConfig};
use crate::error::Error;
use crate::model::{calibrate, Frictions, LatticeSpec, MarketParams};
use crate::payoff::{PayoffKind, PayoffSpec};

pub const FORMAT_VERSION: u32 = 1;
pub const CONFIG_ENV: &str = "SHORTFALL_CONFIG";

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GRID_ESCAPE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "shortfall", version, about = "Minimal shortfall risk under proportional transaction costs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shortfall risk R_n(x) at one capital.
    Risk(Settings),
    /// R_n along a list of step counts, with successive differences.
    Converge(Settings),
    /// Risk curve x -> R_n(x).
    Frontier(Settings),
    /// Embedding diagnostics and a shortfall bracket for the lifted strategy.
    Simulate(Settings),
    /// Dynamic programming against brute-force search (n <= 3).
    Oracle(Settings),
    /// Optimal-stopping value of the payoff (zero-capital risk).
    Snell(Settings),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Risk(_) => "risk",
            Command::Converge(_) => "converge",
            Command::Frontier(_) => "frontier",
            Command::Simulate(_) => "simulate",
            Command::Oracle(_) => "oracle",
            Command::Snell(_) => "snell",
        }
    }

    fn settings(&self) -> &Settings {
        match self {
            Command::Risk(s)
            | Command::Converge(s)
            | Command::Frontier(s)
            | Command::Simulate(s)
            | Command::Oracle(s)
            | Command::Snell(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Every setting is optional here; see [`RunConfig`] for the resolved form.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// JSON config file; defaults to $SHORTFALL_CONFIG.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub maturity: Option<f64>,
    /// call, put, capped-call, lookback-max, russian or constant.
    #[arg(long)]
    pub payoff: Option<PayoffKind>,
    #[arg(long)]
    pub strike: Option<f64>,
    #[arg(long)]
    pub cap: Option<f64>,
    /// Level of the constant payoff.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Initial capital.
    #[arg(long)]
    pub x: Option<f64>,
    /// Initial capital as a fraction of the Snell value, used when --x is absent.
    #[arg(long)]
    pub x_frac: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub x_list: Option<Vec<f64>>,
    #[arg(long)]
    pub grid_u: Option<usize>,
    #[arg(long)]
    pub grid_v: Option<usize>,
    #[arg(long)]
    pub w_candidates: Option<usize>,
    /// Transfer grid of the brute-force oracle.
    #[arg(long)]
    pub oracle_grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub fine_steps: Option<usize>,
    #[arg(long)]
    pub t_sim: Option<f64>,
    #[arg(long)]
    pub antithetic: Option<bool>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub format: Option<Format>,
    /// Output file, or `-` for stdout (csv only). JSON defaults to `<command>.json`.
    #[arg(long)]
    pub out: Option<String>,
    /// Sign path such as `udu` (or `+-+`) whose wealth path `risk` exports.
    #[arg(long)]
    pub signs: Option<String>,
    /// CSV file for the (k, V, v, w) wealth path along `--signs`.
    #[arg(long)]
    pub path_out: Option<PathBuf>,
    /// JSON file receiving every node's value grid (axes and row-major samples).
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Settings { config: $hi.config.clone().or_else(|| $lo.config.clone()), $($f: $hi.$f.clone().or_else(|| $lo.$f.clone())),* }
    };
}

impl Settings {
    /// Fields of `self` win over those of `other`.
    pub fn or(&self, other: &Settings) -> Settings {
        merge_fields!(
            self, other, s0, sigma, kappa, maturity, payoff, strike, cap, level, lambda, mu, x, x_frac, n, n_list,
            x_list, grid_u, grid_v, w_candidates, oracle_grid, seed, paths, fine_steps, t_sim, antithetic, threads,
            format, out, signs, path_out, dump
        )
    }
}

/// Fully resolved run configuration, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub market: MarketParams,
    pub frictions: Frictions,
    pub payoff: PayoffSpec,
    pub n: usize,
    pub n_list: Vec<usize>,
    pub x: Option<f64>,
    pub x_frac: f64,
    pub x_list: Option<Vec<f64>>,
    pub grid_u: Option<usize>,
    pub grid_v: Option<usize>,
    pub w_candidates: usize,
    pub oracle_grid: usize,
    pub seed: Option<u64>,
    pub paths: usize,
    pub fine_steps: Option<usize>,
    pub t_sim: Option<f64>,
    pub antithetic: bool,
    pub threads: Option<usize>,
    pub format: Format,
    pub out: String,
    pub signs: Option<Vec<i8>>,
    pub path_out: Option<PathBuf>,
    pub dump: Option<PathBuf>,
}

fn parse_signs(text: &str) -> Result<Vec<i8>, Error> {
    text.chars()
        .map(|c| match c {
            'u' | 'U' | '+' => Ok(1),
            'd' | 'D' | '-' => Ok(-1),
            other => Err(config_error(format!("bad sign {other:?} in --signs"))),
        })
        .collect()
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn load_file(path: &Path) -> Result<Settings, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("bad config {}: {e}", path.display())))
}

impl RunConfig {
    pub fn resolve(command: &str, cli: &Settings) -> Result<Self, Error> {
        let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let s = match path {
            Some(p) => cli.or(&load_file(&p)?),
            None => cli.clone(),
        };
        let d = MarketParams::default();
        let market = MarketParams::new(
            s.s0.unwrap_or(d.s0),
            s.sigma.unwrap_or(d.sigma),
            s.kappa.unwrap_or(d.kappa),
            s.maturity.unwrap_or(d.maturity),
        )?;
        let frictions = Frictions::new(s.lambda.unwrap_or(0.01), s.mu.unwrap_or(0.01))?;
        let kind = s.payoff.unwrap_or(PayoffKind::Call);
        let strike = s.strike.unwrap_or(market.s0);
        let payoff = match kind {
            PayoffKind::Call => PayoffSpec::call(strike),
            PayoffKind::Put => PayoffSpec::put(strike),
            PayoffKind::CappedCall => {
                PayoffSpec::capped_call(strike, s.cap.ok_or_else(|| config_error("capped-call needs --cap"))?)
            }
            PayoffKind::LookbackMax => PayoffSpec::lookback_max(),
            PayoffKind::Russian => PayoffSpec::russian(),
            PayoffKind::Constant => PayoffSpec::constant(s.level.unwrap_or(0.0)),
        };
        payoff.validate()?;
        let n = s.n.unwrap_or(16);
        let n_list = s.n_list.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
        if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
            return Err(config_error("--n-list must be non-empty, positive and strictly ascending"));
        }
        if let Some(x) = s.x {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(config_error("--x must be >= 0"));
            }
        }
        let x_frac = s.x_frac.unwrap_or(0.5);
        if !(x_frac >= 0.0 && x_frac.is_finite()) {
            return Err(config_error("--x-frac must be >= 0"));
        }
        if let Some(xs) = &s.x_list {
            if xs.windows(2).any(|w| w[1] < w[0]) || xs.iter().any(|x| !(*x >= 0.0)) {
                return Err(config_error("--x-list must be sorted and >= 0"));
            }
        }
        let format = s.format.unwrap_or(Format::Json);
        let out = match (&s.out, format) {
            (Some(o), Format::Json) if o == "-" => {
                return Err(config_error("stdout output is reserved for --format csv"));
            }
            (Some(o), _) => o.clone(),
            (None, Format::Csv) => "-".into(),
            (None, Format::Json) => format!("{command}.json"),
        };
        let signs = s.signs.as_deref().map(parse_signs).transpose()?;
        if signs.is_some() != s.path_out.is_some() {
            return Err(config_error("--signs and --path-out go together"));
        }
        Ok(RunConfig {
            market,
            frictions,
            payoff,
            n,
            n_list,
            x: s.x,
            x_frac,
            x_list: s.x_list.clone(),
            grid_u: s.grid_u,
            grid_v: s.grid_v,
            w_candidates: s.w_candidates.unwrap_or(0),
            oracle_grid: s.oracle_grid.unwrap_or(100),
            seed: s.seed,
            paths: s.paths.unwrap_or(2000),
            fine_steps: s.fine_steps,
            t_sim: s.t_sim,
            antithetic: s.antithetic.unwrap_or(false),
            threads: s.threads,
            format,
            out,
            signs,
            path_out: s.path_out.clone(),
            dump: s.dump.clone(),
        })
    }

    fn lattice(&self, n: usize) -> Result<LatticeSpec, Error> {
        calibrate(&self.market, n)
    }

    fn grid(&self, spec: &LatticeSpec) -> GridSpec {
        let base = GridSpec::for_instance(spec, &self.payoff, &self.frictions);
        let mut grid = GridSpec::with_size(
            spec,
            &self.payoff,
            &self.frictions,
            self.grid_u.unwrap_or(base.n_u),
            self.grid_v.unwrap_or(base.n_v),
        );
        grid.w_candidates = self.w_candidates;
        grid
    }

    fn capital(&self, spec: &LatticeSpec) -> Result<f64, Error> {
        match self.x {
            Some(x) => Ok(x),
            None => Ok(self.x_frac * snell_value(spec, &self.payoff)?),
        }
    }

    fn sim_config(&self, n: usize) -> Result<SimConfig, Error> {
        let seed = self.seed.ok_or_else(|| config_error("simulate needs --seed"))?;
        let mut cfg = SimConfig::for_steps(&self.market, n, self.paths, seed);
        if let Some(m) = self.fine_steps {
            cfg.fine_steps = m;
        }
        if let Some(t) = self.t_sim {
            cfg.t_sim = t;
        }
        cfg.antithetic = self.antithetic;
        cfg.validate(&self.market)?;
        Ok(cfg)
    }
}

/// Tabular result: a JSON value plus CSV columns and rows.
pub struct Output {
    pub result: Value,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

fn cell(x: f64) -> String {
    format!("{x:.12e}")
}

fn solve_at(cfg: &RunConfig, spec: &LatticeSpec, grid: &GridSpec) -> Result<crate::dp::Solution, Error> {
    solve(spec, &cfg.payoff, &cfg.frictions, grid, SolveOptions::default())
}

pub fn cmd_risk(cfg: &RunConfig) -> Result<Output, Error> {
    let spec = cfg.lattice(cfg.n)?;
    let x = cfg.capital(&spec)?;
    let grid = cfg.grid(&spec).with_extra_u([x]);
    let sol = solve_at(cfg, &spec, &grid)?;
    let report = report_from(&sol, x);
    if let Some(path) = &cfg.dump {
        let grids: Vec<_> = (0..sol.values.len())
            .flat_map(|k| (0..sol.values[k].len()).map(move |node| (k, node)))
            .map(|(k, node)| sol.value_grid(k, node))
            .collect();
        let doc = json!({ "format_version": FORMAT_VERSION, "config": cfg, "value_grids": grids });
        write_output(&path.to_string_lossy(), &(doc.to_string() + "\n"))
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    if let (Some(signs), Some(path)) = (&cfg.signs, &cfg.path_out) {
        let walk = extract_strategy(&sol, x, signs)?;
        let config = serde_json::to_string(cfg).expect("config serializes");
        let mut text = format!("# format_version={FORMAT_VERSION}\n# config={config}\nk,V,v,w\n");
        for k in 0..walk.wealth.len() {
            let w = walk.transfers.get(k).map_or_else(String::new, |w| cell(*w));
            text += &format!("{k},{},{},{w}\n", cell(walk.wealth[k]), cell(walk.positions[k]));
        }
        write_output(&path.to_string_lossy(), &text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    let snell = snell_value(&spec, &cfg.payoff)?;
    let row = vec![
        cfg.n.to_string(),
        cell(x),
        cell(report.risk),
        cell(snell),
        report.grid_points.0.to_string(),
        report.grid_points.1.to_string(),
        report.diagnostics.boundary_escapes.to_string(),
    ];
    let mut result = serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?;
    result["snell"] = json!(snell);
    Ok(Output {
        result,
        columns: vec!["n", "x", "risk", "snell", "n_u", "n_v", "boundary_escapes"],
        rows: vec![row],
    })
}

pub fn cmd_snell(cfg: &RunConfig) -> Result<Output, Error> {
    let spec = cfg.lattice(cfg.n)?;
    let snell = snell_value(&spec, &cfg.payoff)?;
    Ok(Output {
        result: json!({ "n": cfg.n, "snell": snell, "lattice": spec }),
        columns: vec!["n", "snell"],
        rows: vec![vec![cfg.n.to_string(), cell(snell)]],
    })
}

pub fn cmd_converge(cfg: &RunConfig) -> Result<Output, Error> {
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut last: Option<f64> = None;
    for &n in &cfg.n_list {
        let spec = cfg.lattice(n)?;
        let x = cfg.capital(&spec)?;
        let grid = cfg.grid(&spec).with_extra_u([x]);
        let risk = solve_at(cfg, &spec, &grid)?.risk_at(x);
        // residual against half the points per axis
        let coarse = GridSpec { n_u: grid.n_u / 2 + 1, n_v: (grid.n_v / 4) * 2 + 1, ..grid.clone() };
        let residual = (solve_at(cfg, &spec, &coarse)?.risk_at(x) - risk).abs();
        let diff = last.map(|l| (risk - l).abs());
        last = Some(risk);
        log::info!("n = {n}: R = {risk:.8}");
        rows.push(vec![
            n.to_string(),
            cell(x),
            cell(risk),
            cell(residual),
            diff.map_or_else(String::new, cell),
        ]);
        entries.push(json!({ "n": n, "x": x, "risk": risk, "grid_residual": residual, "difference": diff }));
    }
    Ok(Output {
        result: json!({ "rows": entries }),
        columns: vec!["n", "x", "risk", "grid_residual", "difference"],
        rows,
    })
}

pub fn cmd_frontier(cfg: &RunConfig) -> Result<Output, Error> {
    let spec = cfg.lattice(cfg.n)?;
    let xs = match &cfg.x_list {
        Some(xs) => xs.clone(),
        None => {
            let top = 1.2 * snell_value(&spec, &cfg.payoff)?;
            (0..=50).map(|i| top * i as f64 / 50.0).collect()
        }
    };
    let grid = cfg.grid(&spec).with_extra_u(xs.iter().copied());
    let curve = curve_from(&solve_at(cfg, &spec, &grid)?, &xs);
    let rows = curve.points.iter().map(|(x, r)| vec![cell(*x), cell(*r)]).collect();
    Ok(Output {
        result: serde_json::to_value(&curve).map_err(|e| Error::Config(e.to_string()))?,
        columns: vec!["x", "risk"],
        rows,
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Output, Error> {
    let spec = cfg.lattice(cfg.n)?;
    let largest = cfg.n_list.iter().copied().chain([cfg.n]).max().unwrap_or(cfg.n);
    let diag_cfg = cfg.sim_config(largest)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut diagnostics = Vec::new();
    for &n in &cfg.n_list {
        let c = SimConfig { fine_steps: cfg.fine_steps.unwrap_or(200 * n), ..diag_cfg };
        let table = convergence_diagnostics(&cfg.market, &cfg.payoff, &[n], &c)?;
        for r in &table {
            rows.push(vec![
                r.n.to_string(),
                r.estimator.clone(),
                cell(r.estimate),
                cell(r.std_error),
                r.n_effective.to_string(),
            ]);
        }
        diagnostics.extend(table);
    }
    if spec.n > 20 {
        return Err(config_error("the lifted strategy is built on the full tree; use --n <= 20"));
    }
    let x = cfg.capital(&spec)?;
    let grid = cfg.grid(&spec).with_extra_u([x]);
    let sol = solve_at(cfg, &spec, &grid)?;
    let tree = extract_tree(&sol, x)?;
    let bracket = shortfall_bracket(x, &sol, &tree, &cfg.market, &cfg.sim_config(spec.n)?)?;
    for (name, value, se) in [
        ("bracket_lower", bracket.lower, bracket.lower_std_error),
        ("bracket_upper_proxy", bracket.upper_proxy, bracket.upper_std_error),
        ("lift_violations", bracket.lift_violations as f64, 0.0),
    ] {
        rows.push(vec![spec.n.to_string(), name.into(), cell(value), cell(se), bracket.completed_paths.to_string()]);
    }
    Ok(Output {
        result: json!({ "diagnostics": diagnostics, "bracket": bracket, "fine_steps": diag_cfg.fine_steps }),
        columns: vec!["n", "estimator", "estimate", "std_error", "n_effective"],
        rows,
    })
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<Output, Error> {
    if cfg.n > ORACLE_MAX_STEPS {
        return Err(config_error(format!("oracle supports n <= {ORACLE_MAX_STEPS}, got {}", cfg.n)));
    }
    let spec = cfg.lattice(cfg.n)?;
    let x = cfg.capital(&spec)?;
    let grid = cfg.grid(&spec).with_extra_u([x]);
    let dp = solve_at(cfg, &spec, &grid)?.risk_at(x);
    let oracle = oracle_bruteforce(&spec, &cfg.payoff, &cfg.frictions, x, cfg.oracle_grid)?.risk;
    let gap = (dp - oracle).abs();
    let rel = gap / (1.0 + oracle);
    Ok(Output {
        result: json!({ "n": cfg.n, "x": x, "dp": dp, "oracle": oracle, "abs_gap": gap, "rel_gap": rel }),
        columns: vec!["n", "x", "dp", "oracle", "abs_gap", "rel_gap"],
        rows: vec![vec![cfg.n.to_string(), cell(x), cell(dp), cell(oracle), cell(gap), cell(rel)]],
    })
}

/// Serializes an output with the resolved config.
pub fn render(command: &str, cfg: &RunConfig, out: &Output) -> String {
    match cfg.format {
        Format::Json => {
            let doc = json!({
                "format_version": FORMAT_VERSION,
                "command": command,
                "config": cfg,
                "result": out.result,
            });
            serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"
        }
        Format::Csv => {
            let mut s = format!("# format_version={FORMAT_VERSION}\n# command={command}\n");
            s += &format!("# config={}\n", serde_json::to_string(cfg).expect("config serializes"));
            s += &out.columns.join(",");
            s.push('\n');
            for row in &out.rows {
                s += &row.join(",");
                s.push('\n');
            }
            s
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::GridEscape { .. } => EXIT_GRID_ESCAPE,
        Error::InvalidParameter(_)
        | Error::Config(_)
        | Error::TreeTooLarge { .. }
        | Error::LengthMismatch { .. }
        | Error::IndexOutOfRange { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn write_output(target: &str, text: &str) -> std::io::Result<()> {
    if target == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        return stdout.flush();
    }
    let path = Path::new(target);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let command = cli.command;
    let cfg = match RunConfig::resolve(command.name(), command.settings()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let exec = || match &command {
        Command::Risk(_) => cmd_risk(&cfg),
        Command::Converge(_) => cmd_converge(&cfg),
        Command::Frontier(_) => cmd_frontier(&cfg),
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Oracle(_) => cmd_oracle(&cfg),
        Command::Snell(_) => cmd_snell(&cfg),
    };
    let result = match cfg.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(exec),
            Err(e) => Err(Error::Config(format!("thread pool: {e}"))),
        },
        None => exec(),
    };
    match result {
        Ok(out) => match write_output(&cfg.out, &render(command.name(), &cfg, &out)) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: cannot write {}: {e}", cfg.out);
                EXIT_RUNTIME
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            code
        }
    }
}
