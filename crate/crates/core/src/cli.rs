//! Command-line front end: load a case, apply scenario modifiers, run the
//! decentralized mechanism, the centralized benchmark or both, and write
//! traces and reports.
//!
//! Exit codes are a stable contract: 0 success, 2 configuration error,
//! 3 infeasible model, 4 convergence failure (including failed checks in
//! `compare` mode). Errors are written to stderr as one JSON object.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::benchmark::{self, BenchmarkError, CentralSolution, ComparisonReport};
use crate::coupling::{self, CouplingError, CouplingState, MechanismConfig, RhoSchedule, TraceRecord};
use crate::grid::{self, GridError, Network, ScenarioModifiers, SCENARIO_FLAGS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

/// Relative tolerance on the limit-versus-benchmark cost gap in `compare` mode.
pub const OBJECTIVE_GAP_TOL: f64 = 1e-3;
/// Tolerance on tie flows, MW, in `compare` mode.
pub const FLOW_DEVIATION_TOL: f64 = 1e-2;
/// Tolerance on per-area Nash gaps, relative to `1 + |V_a|`.
pub const NASH_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "flexmarket", version, about = "Decentralized intraday market coupling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clear a case decentrally, centrally, or both and compare.
    Run(RunArgs),
    /// List the supported scenario modifiers.
    Scenarios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Decentralized,
    Centralized,
    Compare,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Bundled case name (toy2, toy2-congested, tri3) or path to a case JSON file.
    #[arg(long)]
    pub case: String,
    #[arg(long, value_enum, default_value_t = Mode::Decentralized)]
    pub mode: Mode,
    /// Scenario modifier `key=value`; repeatable. See `flexmarket scenarios`.
    #[arg(long = "scenario", value_name = "KEY=VALUE")]
    pub scenarios: Vec<String>,
    /// Write the per-round trace as CSV.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Write the run summary or comparison report as JSON.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Step-size numerator in `rho0 / (k + k0)^p`.
    #[arg(long)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub k0: Option<f64>,
    /// Step-size exponent `p`, in (0.5, 1].
    #[arg(long)]
    pub rho_exponent: Option<f64>,
    /// Constant step of the capacity-price update.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Stopping tolerance on the per-round step norm.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Clear areas one after another instead of concurrently.
    #[arg(long)]
    pub sequential: bool,
}

/// Fully resolved run request.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case: String,
    pub scenario: ScenarioModifiers,
    pub mechanism: MechanismConfig,
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub mode: Mode,
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let defaults = MechanismConfig::default();
        let rho = RhoSchedule {
            rho0: args.rho0.unwrap_or(defaults.rho.rho0),
            k0: args.k0.unwrap_or(defaults.rho.k0),
            p: args.rho_exponent.unwrap_or(defaults.rho.p),
        };
        let mechanism = MechanismConfig {
            max_rounds: args.max_rounds.unwrap_or(defaults.max_rounds),
            rho,
            beta: args.beta.unwrap_or(defaults.beta),
            tol: args.tol.unwrap_or(defaults.tol),
            parallel: !args.sequential,
            ..defaults
        };
        mechanism.check().map_err(|e| CliError::Config(e.to_string()))?;
        if args.trace.is_some() && args.mode == Mode::Centralized {
            return Err(CliError::Config("--trace needs a decentralized run (mode decentralized or compare)".into()));
        }
        Ok(Self {
            case: args.case.clone(),
            scenario: ScenarioModifiers::parse_all(&args.scenarios)?,
            mechanism,
            trace: args.trace.clone(),
            report: args.report.clone(),
            mode: args.mode,
        })
    }

    /// The case with the scenario applied.
    pub fn network(&self) -> Result<Network, CliError> {
        let base = grid::resolve_case(&self.case)?;
        let net = grid::apply_scenario(&base, &self.scenario)?;
        let structural = grid::structural_violations(&net);
        if !structural.is_empty() {
            return Err(GridError::Invalid(structural).into());
        }
        // a well-formed case whose areas cannot clear alone is an infeasible model
        let short = crate::market::autarky_violations(&net);
        if !short.is_empty() {
            return Err(CliError::Infeasible(GridError::Invalid(short).to_string()));
        }
        Ok(net)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Convergence(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Convergence(_) => EXIT_CONVERGENCE,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Infeasible(_) => "infeasible",
            CliError::Convergence(_) => "convergence",
        }
    }

    /// `{"error": kind, "exit_code": n, "message": text}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() })
            .to_string()
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CouplingError> for CliError {
    fn from(e: CouplingError) -> Self {
        match e {
            CouplingError::Config(_) => CliError::Config(e.to_string()),
            e if e.is_infeasible() => CliError::Infeasible(e.to_string()),
            e => CliError::Convergence(e.to_string()),
        }
    }
}

impl From<BenchmarkError> for CliError {
    fn from(e: BenchmarkError) -> Self {
        match &e {
            BenchmarkError::Infeasible => CliError::Infeasible(e.to_string()),
            BenchmarkError::Market(m) if m.is_infeasible() => CliError::Infeasible(e.to_string()),
            BenchmarkError::Model(_) => CliError::Config(e.to_string()),
            _ => CliError::Convergence(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TieSummary {
    /// `T_da + dT` in the tie's `from` orientation, MW.
    pub flow: f64,
    pub mu: f64,
    pub consensus_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AreaSummary {
    pub gamma: f64,
    pub generation_cost: f64,
    pub delta_p: BTreeMap<String, f64>,
}

/// Final state of a decentralized run.
#[derive(Debug, Clone, Serialize)]
pub struct DecentralizedSummary {
    pub rounds: usize,
    pub converged: bool,
    pub total_cost: f64,
    pub ties: BTreeMap<String, TieSummary>,
    pub areas: BTreeMap<String, AreaSummary>,
}

impl DecentralizedSummary {
    pub fn new(net: &Network, state: &CouplingState) -> Self {
        let ties = net
            .tie_lines()
            .iter()
            .map(|t| {
                let from = state.areas[&t.from_area].ties[&t.id].delta_t;
                let to = state.areas[&t.to_area].ties[&t.id].delta_t;
                let summary =
                    TieSummary { flow: t.t_da + from, mu: state.mu[&t.id], consensus_residual: (from + to).abs() };
                (t.id.clone(), summary)
            })
            .collect();
        let areas: BTreeMap<String, AreaSummary> = state
            .last
            .iter()
            .map(|(id, r)| {
                let summary = AreaSummary {
                    gamma: r.duals.gamma,
                    generation_cost: r.generation_cost,
                    delta_p: r.decision.delta_p.clone(),
                };
                (id.clone(), summary)
            })
            .collect();
        Self {
            rounds: state.k,
            converged: state.converged,
            total_cost: areas.values().map(|a| a.generation_cost).sum(),
            ties,
            areas,
        }
    }
}

/// Solution of the centralized benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct CentralizedSummary {
    pub total_cost: f64,
    /// `T_da + dT` per tie in its `from` orientation, MW.
    pub flows: BTreeMap<String, f64>,
    /// Nodal price `gamma_a + alpha_(a,i)` per area and bus, USD/MWh.
    pub prices: BTreeMap<String, BTreeMap<String, f64>>,
    pub delta_p: BTreeMap<String, f64>,
}

impl CentralizedSummary {
    pub fn new(net: &Network, sol: &CentralSolution) -> Self {
        let flows =
            net.tie_lines().iter().filter_map(|t| Some((t.id.clone(), sol.flow(net, &t.from_area, &t.id)?))).collect();
        let prices = sol
            .duals
            .iter()
            .map(|(a, d)| (a.clone(), d.alpha.iter().map(|(b, al)| (b.clone(), d.gamma + al)).collect()))
            .collect();
        let delta_p = sol.decisions.values().flat_map(|d| d.delta_p.clone()).collect();
        Self { total_cost: sol.objective, flows, prices, delta_p }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum RunReport {
    Decentralized(DecentralizedSummary),
    Centralized(CentralizedSummary),
    Compare(ComparisonReport),
}

/// What a run produced; files have already been written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trace: Option<Vec<TraceRecord>>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<(), CliError> {
    write_file(path, coupling::trace_csv_string(trace).as_bytes())
}

fn run_mechanism(net: &Network, config: &RunConfig) -> Result<(CouplingState, Vec<TraceRecord>), CliError> {
    let (state, trace) = coupling::run(net, &config.mechanism)?;
    if let Some(path) = &config.trace {
        write_trace(path, &trace)?;
    }
    Ok((state, trace))
}

fn not_converged(state: &CouplingState) -> CliError {
    CliError::Convergence(format!("mechanism did not converge within {} rounds", state.k))
}

/// Which comparison thresholds the report misses, if any.
pub fn failed_checks(report: &ComparisonReport, central_cost: f64) -> Vec<String> {
    let mut failed = Vec::new();
    let rel = report.objective_gap.abs() / central_cost.abs().max(1.0);
    if rel > OBJECTIVE_GAP_TOL {
        failed.push(format!("relative objective gap {rel:e} > {OBJECTIVE_GAP_TOL:e}"));
    }
    if report.flow_deviation > FLOW_DEVIATION_TOL {
        failed.push(format!("flow deviation {:e} MW > {FLOW_DEVIATION_TOL:e}", report.flow_deviation));
    }
    if report.kkt_residuals.max() > benchmark::KKT_TOL {
        failed.push(format!("KKT residual {:e} > {:e}", report.kkt_residuals.max(), benchmark::KKT_TOL));
    }
    if report.feasibility_residuals.max() > benchmark::FEASIBILITY_TOL {
        failed.push(format!(
            "feasibility residual {:e} > {:e}",
            report.feasibility_residuals.max(),
            benchmark::FEASIBILITY_TOL
        ));
    }
    for (area, gap) in &report.nash_gaps {
        if *gap > NASH_TOL * (1.0 + central_cost.abs()) {
            failed.push(format!("area {area} can gain {gap:e} by deviating"));
        }
    }
    failed
}

/// Executes one run. Output files are written before any threshold failure
/// is reported, so a failing comparison still leaves its report behind.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let net = config.network()?;
    match config.mode {
        Mode::Decentralized => {
            let (state, trace) = run_mechanism(&net, config)?;
            let report = RunReport::Decentralized(DecentralizedSummary::new(&net, &state));
            if let Some(path) = &config.report {
                write_file(path, to_json(&report).as_bytes())?;
            }
            if !state.converged {
                return Err(not_converged(&state));
            }
            Ok(RunOutcome { report, trace: Some(trace) })
        }
        Mode::Centralized => {
            let sol = benchmark::solve_centralized(&net, &config.mechanism.clearing)?;
            let report = RunReport::Centralized(CentralizedSummary::new(&net, &sol));
            if let Some(path) = &config.report {
                write_file(path, to_json(&report).as_bytes())?;
            }
            Ok(RunOutcome { report, trace: None })
        }
        Mode::Compare => {
            let sol = benchmark::solve_centralized(&net, &config.mechanism.clearing)?;
            let (state, trace) = run_mechanism(&net, config)?;
            if !state.converged {
                return Err(not_converged(&state));
            }
            let cmp = benchmark::compare(&state, &net, &sol, &config.mechanism.clearing)?;
            if let Some(path) = &config.report {
                write_file(path, to_json(&cmp).as_bytes())?;
            }
            let failed = failed_checks(&cmp, sol.objective);
            if !failed.is_empty() {
                return Err(CliError::Convergence(format!("comparison checks failed: {}", failed.join("; "))));
            }
            Ok(RunOutcome { report: RunReport::Compare(cmp), trace: Some(trace) })
        }
    }
}

/// One line per supported modifier.
pub fn cmd_scenarios() -> String {
    SCENARIO_FLAGS.iter().map(|(flag, help)| format!("{flag:<30} {help}\n")).collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Parses `args` and runs the command, printing to stdout/stderr. Returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": "usage", "exit_code": EXIT_CONFIG, "message": msg.trim() }));
            return EXIT_CONFIG;
        }
    };
    let result = match &cli.command {
        Command::Scenarios => {
            print!("{}", cmd_scenarios());
            return EXIT_OK;
        }
        Command::Run(args) => RunConfig::from_args(args).and_then(|cfg| cmd_run(&cfg)),
    };
    match result {
        Ok(outcome) => {
            print!("{}", to_json(&outcome.report));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

/// Installs the logger; the level comes from `FLEX_LOG_LEVEL` (default `error`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("FLEX_LOG_LEVEL", "error");
    let _ = env_logger::Builder::from_env(env).try_init();
}
