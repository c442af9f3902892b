//! Backward dynamic programming for the minimal shortfall risk.

pub mod grid;
pub mod inner;
pub mod oracle;
pub mod solve;
pub mod strategy;

pub use grid::{GridAxes, GridSpec};
pub use inner::{inner_min, ChildValue, InnerProblem, InnerResult};
pub use oracle::{
    oracle_bruteforce, oracle_bruteforce_with, oracle_strategy_risk, OracleResult, ORACLE_MAX_STEPS, ORACLE_REFINE_ROUNDS,
};
pub use solve::{
    build_layers, snell_value, solve, NodeLayer, Policy, SolveDiagnostics, SolveOptions, Solution, ValueGrid,
    FULL_TREE_CUTOFF,
};
pub use strategy::{
    curve_from, evaluate_strategy_risk, extract_strategy, extract_tree, report_from, risk_curve, shortfall_risk,
    ExtractedPath,
    RiskCurve, RiskReport, TransferTree,
};
