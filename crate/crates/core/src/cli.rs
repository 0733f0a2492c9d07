//! Command-line front end.
//!
//! Parameters come from `--config FILE` (the JSON document accepted by
//! [`MarketParams::from_json_str`]) or default to `sigma_S = sigma_K = 1`,
//! `gamma = 1`, `rho = 0.05`, `dt = 0.004` with one trader; inline flags
//! override either source. Exit codes: 0 on success, 1 when a verification
//! check or a computation fails, 2 on invalid configuration.

use crate::asymptotics::{monopoly_expansions, nash_expansions, Expansion, Quantity};
use crate::model::{validate, ConfigError, MarketParams, ValidatedParams};
use crate::simulator::{
    dealer_profit_check, deviation_sweep, estimate_objective_streaming, horizon, inventory_second_moment,
    prediction_second_moment_mc, simulate, SimConfig, SimError, StrategySpec, DEFAULT_TAIL_TOL,
};
use crate::solver::{solve, solve_nash, SolveError, QUARTIC_RESIDUAL_TOL, SYSTEM_RESIDUAL_TOL};
use crate::value::{
    default_dpe_grid, dpe_residual, lemma_identity_residual, value_coefficients, ValueError, DPE_TOL,
    LEMMA_IDENTITY_TOL,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "hft-eq", version, about = "Equilibria of inventory-averse high-frequency traders")]
pub struct Cli {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Write the artifact here instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// JSON parameter document.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long = "sigma-s", global = true, allow_negative_numbers = true)]
    pub sigma_s: Option<f64>,
    #[arg(long = "sigma-k", global = true, allow_negative_numbers = true)]
    pub sigma_k: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    /// Number of identical traders.
    #[arg(long, global = true)]
    pub traders: Option<usize>,
    /// Per-trader inventory costs, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub gammas: Vec<f64>,
    /// Per-trader discount rates, comma separated; a single value applies to all.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub rhos: Vec<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tax: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the equilibrium and its value functions.
    Solve,
    /// Print high-frequency limits and first-order coefficients.
    Expand,
    /// Exact against limit and expansion along a dt grid, or price impact along k.
    Sweep {
        /// Geometric dt grid `a:b:n`.
        #[arg(long = "dt-grid", conflicts_with = "k_grid")]
        dt_grid: Option<GeomGrid>,
        /// Trader counts `a..b` (inclusive) or a single count.
        #[arg(long = "k-grid", visible_alias = "k")]
        k_grid: Option<KRange>,
    },
    /// Price impact and total trading cost along a tax grid.
    TaxSweep {
        /// Linear tax grid `a:b:n`.
        #[arg(long = "c-grid", default_value = "0:0.2:21")]
        c_grid: LinGrid,
    },
    /// Monte Carlo estimates of objectives and dealer profits.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// Rounds per path in the stored batch used for the dealer check and exports.
        #[arg(long, default_value_t = 1000)]
        rounds: usize,
        /// Export the stored batch as a binary frame.
        #[arg(long, value_name = "FILE")]
        frame: Option<PathBuf>,
        /// Export the stored batch as CSV.
        #[arg(long = "paths-csv", value_name = "FILE")]
        paths_csv: Option<PathBuf>,
    },
    /// Run the invariant battery.
    Verify {
        #[command(flatten)]
        sim: SimArgs,
        /// Halve every deterministic tolerance.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long = "tail-tol", default_value_t = DEFAULT_TAIL_TOL)]
    pub tail_tol: f64,
}

/// `a:b:n`, equally spaced in log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomGrid {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

/// `a:b:n`, equally spaced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinGrid {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

/// `a..b` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KRange {
    pub a: usize,
    pub b: usize,
}

fn parse_triple(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected a:b:n, got {s:?}"));
    }
    let a = parts[0].parse::<f64>().map_err(|e| e.to_string())?;
    let b = parts[1].parse::<f64>().map_err(|e| e.to_string())?;
    let n = parts[2].parse::<usize>().map_err(|e| e.to_string())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(format!("bad grid {s:?}"));
    }
    Ok((a, b, n))
}

impl FromStr for GeomGrid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b, n) = parse_triple(s)?;
        if a <= 0.0 || b <= 0.0 {
            return Err("geometric grid endpoints must be positive".into());
        }
        Ok(Self { a, b, n })
    }
}

impl GeomGrid {
    pub fn points(&self) -> Vec<f64> {
        crate::asymptotics::geometric_grid(self.a, self.b, self.n)
    }
}

impl FromStr for LinGrid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b, n) = parse_triple(s)?;
        Ok(Self { a, b, n })
    }
}

impl LinGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.a];
        }
        (0..self.n).map(|j| self.a + (self.b - self.a) * j as f64 / (self.n - 1) as f64).collect()
    }
}

impl FromStr for KRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
        let (a, b) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
            None => (parse(s)?, parse(s)?),
        };
        if a == 0 || b < a {
            return Err(format!("bad trader range {s:?}"));
        }
        Ok(Self { a, b })
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("verification failed: {}", .0.join(", "))]
    VerificationFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl ParamArgs {
    /// Config file or defaults, with inline flags applied on top.
    pub fn resolve(&self) -> Result<ValidatedParams, CliError> {
        let mut p = match &self.config {
            Some(path) => MarketParams::from_json_file(path)?,
            None => MarketParams::homogeneous(1.0, 1.0, 0.004, 1, 1.0, 0.05),
        };
        if let Some(v) = self.sigma_s {
            p.sigma_s = v;
        }
        if let Some(v) = self.sigma_k {
            p.sigma_k = v;
        }
        if let Some(v) = self.dt {
            p.dt = v;
        }
        if let Some(v) = self.tax {
            p.tax = v;
        }
        let k = match (self.traders, self.gammas.len(), self.rhos.len()) {
            (Some(k), g, r) if (g > 1 && g != k) || (r > 1 && r != k) => {
                return Err(CliError::Usage(format!("--traders {k} disagrees with the gamma/rho lists")));
            }
            (Some(k), _, _) => k,
            (None, g, r) if g > 1 && r > 1 && g != r => {
                return Err(CliError::Usage("--gammas and --rhos have different lengths".into()));
            }
            (None, g, r) if g > 1 || r > 1 => g.max(r),
            (None, _, _) => p.traders.len(),
        };
        if k == 0 {
            return Err(CliError::Usage("at least one trader is required".into()));
        }
        if let Some(first) = p.traders.first().cloned() {
            p.traders.resize(k, first);
        }
        for (list, set) in [(&self.gammas, 0), (&self.rhos, 1)] {
            for (i, t) in p.traders.iter_mut().enumerate() {
                let v = match list.len() {
                    0 => continue,
                    1 => list[0],
                    _ => list[i],
                };
                if set == 0 {
                    t.gamma = v;
                } else {
                    t.rho = v;
                }
            }
        }
        validate(p).map_err(|e| CliError::Config(e.into()))
    }
}

/// Named columns of floats, emitted as CSV or as `{"columns", "rows"}` JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> Result<(), CliError> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn emit_json<T: Serialize>(value: &T, out: &mut dyn Write) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn emit_table(table: &Table, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    match format {
        Format::Csv => table.write_csv(out),
        Format::Json => emit_json(table, out),
    }
}

pub fn solve_report(params: &ValidatedParams) -> Result<serde_json::Value, CliError> {
    let (eq, diagnostics) = solve(params)?;
    let value = if eq.tax == 0.0 && params.dt() > 0.0 {
        let coeffs = (0..eq.k()).map(|i| value_coefficients(&eq, i, params)).collect::<Result<Vec<_>, _>>()?;
        serde_json::to_value(coeffs).map_err(std::io::Error::from)?
    } else {
        serde_json::Value::Null
    };
    Ok(json!({
        "params": params,
        "equilibrium": eq,
        "value": value,
        "diagnostics": diagnostics,
    }))
}

/// `(trader, quantity, expansion)` rows; aggregate quantities use trader `all`.
fn expansion_rows(params: &ValidatedParams) -> Vec<(String, &'static str, Expansion)> {
    if params.k() == 1 {
        let m = monopoly_expansions(params);
        return m.entries().iter().map(|(name, e)| ("0".to_string(), *name, **e)).collect();
    }
    let n = nash_expansions(params);
    let mut rows = vec![("all".to_string(), "beta_sigma", n.beta_sigma), ("all".to_string(), "lambda", n.lambda)];
    for (i, tr) in n.traders.iter().enumerate() {
        rows.extend(tr.entries().iter().map(|(name, e)| (i.to_string(), *name, **e)));
    }
    rows
}

fn write_expansion_csv(params: &ValidatedParams, out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "trader,quantity,limit,sqrt_dt_coeff,dt_coeff,remainder_order")?;
    for (trader, name, e) in expansion_rows(params) {
        writeln!(
            out,
            "{trader},{name},{},{},{},{}",
            e.limit,
            e.half_order_coeff,
            e.dt_coeff,
            e.stated_remainder.order()
        )?;
    }
    Ok(())
}

fn expand_report(params: &ValidatedParams) -> serde_json::Value {
    if params.k() == 1 {
        json!({ "k": 1, "monopoly": monopoly_expansions(params) })
    } else {
        json!({ "k": params.k(), "nash": nash_expansions(params) })
    }
}

const DT_SWEEP_COLUMNS: [&str; 16] = [
    "dt",
    "beta_exact",
    "beta_limit",
    "beta_expansion",
    "lambda_exact",
    "lambda_limit",
    "lambda_expansion",
    "phi_over_dt_exact",
    "phi_over_dt_limit",
    "phi_over_dt_expansion",
    "mu_exact",
    "mu_limit",
    "mu_expansion",
    "D_exact",
    "D_limit",
    "D_expansion",
];

/// Trader 0's quantities along `grid`.
pub fn dt_sweep(params: &ValidatedParams, grid: &[f64]) -> Result<Table, CliError> {
    let mut t = Table::new(&DT_SWEEP_COLUMNS);
    let quantities = [Quantity::Beta(0), Quantity::Lambda, Quantity::Phi(0), Quantity::Mu(0), Quantity::D(0)];
    for &dt in grid {
        let p = params.with_dt(dt).map_err(|e| CliError::Config(e.into()))?;
        let (eq, _) = solve_nash(&p)?;
        let d = value_coefficients(&eq, 0, &p)?.d;
        let exact = [eq.betas[0], eq.lambda, eq.phis[0], eq.mus[0], d];
        let mut row = vec![dt];
        for (q, x) in quantities.iter().zip(exact) {
            let e = q.expansion(&p);
            let scale = if matches!(q, Quantity::Phi(_)) { 1.0 / dt } else { 1.0 };
            row.extend([x * scale, e.limit * scale, e.evaluate(dt) * scale]);
        }
        t.rows.push(row);
    }
    Ok(t)
}

/// Price impact against its limit for each trader count, other parameters
/// taken from trader 0.
pub fn k_sweep(params: &ValidatedParams, range: KRange) -> Result<Table, CliError> {
    let mut t = Table::new(&["k", "lambda_exact", "lambda_limit", "relative_gap"]);
    let base = params.params();
    let t0 = base.traders[0].clone();
    for k in range.a..=range.b {
        let mut m = base.clone();
        m.traders = vec![t0.clone(); k];
        let p = validate(m).map_err(|e| CliError::Config(e.into()))?;
        let (eq, _) = solve(&p)?;
        let limit = nash_expansions(&p).lambda.limit;
        t.rows.push(vec![k as f64, eq.lambda, limit, (eq.lambda - limit).abs() / limit]);
    }
    Ok(t)
}

pub fn tax_sweep(params: &ValidatedParams, grid: &[f64]) -> Result<Table, CliError> {
    let mut t = Table::new(&["c", "lambda", "lambda_plus_c"]);
    for &c in grid {
        let p = params.with_tax(c).map_err(|e| CliError::Config(e.into()))?;
        let (eq, _) = solve(&p)?;
        t.rows.push(vec![c, eq.lambda, eq.lambda + c]);
    }
    Ok(t)
}

fn sim_config(sim: &SimArgs) -> SimConfig {
    SimConfig { n_paths: sim.paths, seed: sim.seed, horizon: None, tail_tol: sim.tail_tol, initial_deviation: Vec::new() }
}

fn simulate_report(
    params: &ValidatedParams,
    sim: &SimArgs,
    rounds: usize,
    frame: Option<&PathBuf>,
    paths_csv: Option<&PathBuf>,
) -> Result<serde_json::Value, CliError> {
    let (eq, _) = solve(params)?;
    let cfg = sim_config(sim);
    let n = horizon(params, sim.tail_tol)?;
    let mut objectives = Vec::new();
    let mut mtm = Vec::new();
    let mut targets = Vec::new();
    for i in 0..params.k() {
        let (o, m) = estimate_objective_streaming(&eq, i, params, &cfg)?;
        objectives.push(o);
        mtm.push(m);
        targets.push(value_target(&eq, i, params));
    }
    let batch = simulate(
        &eq,
        &vec![StrategySpec::Equilibrium; params.k()],
        params,
        &SimConfig { horizon: Some(rounds), ..cfg.clone() },
    )?;
    if let Some(path) = frame {
        batch.save_frame(path)?;
    }
    if let Some(path) = paths_csv {
        batch.write_csv(std::fs::File::create(path)?)?;
    }
    Ok(json!({
        "paths": sim.paths,
        "seed": sim.seed,
        "horizon": n,
        "objective": objectives,
        "value_target": targets,
        "mark_to_market": mtm,
        "rounds": rounds,
        "dealer": dealer_profit_check(&batch, &eq),
    }))
}

/// `E[v(M_0, dS_1, Z_0)]` at `Z_0 = 0`, when available.
fn value_target(eq: &crate::solver::Equilibrium, i: usize, params: &ValidatedParams) -> Option<f64> {
    let v = value_coefficients(eq, i, params).ok()?;
    let m0 = params.trader(i).initial_inventory;
    Some(-0.5 * v.a * m0 * m0 + 0.5 * v.b * params.sigma_s().powi(2) * params.dt() + v.d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name.clone()).collect()
    }

    fn push(&mut self, name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) {
        let status = if value <= tolerance { Status::Pass } else { Status::Fail };
        self.checks.push(Check { name: name.into(), status, value, tolerance, detail: detail.into() });
    }

    fn skip(&mut self, name: &str, detail: &str) {
        self.checks.push(Check {
            name: name.into(),
            status: Status::Skipped,
            value: f64::NAN,
            tolerance: f64::NAN,
            detail: detail.into(),
        });
    }
}

/// Standard errors allowed by the statistical checks; `--strict` leaves them alone.
const PROFIT_SLOPE_SE: f64 = 3.0;
const MOMENT_SE: f64 = 4.0;
const SWEEP_SLACK_SE: f64 = 2.0;

pub fn verify(params: &ValidatedParams, sim: &SimArgs, strict: bool) -> Result<VerificationReport, CliError> {
    let scale = if strict { 0.5 } else { 1.0 };
    let mut report = VerificationReport { checks: Vec::new() };
    let (eq, diag) = solve(params)?;

    if params.k() == 1 && params.tax() == 0.0 {
        let r = crate::solver::monopoly_quartic_residual(eq.betas[0], params);
        report.push("quartic_residual", r, QUARTIC_RESIDUAL_TOL * scale, "monopoly quartic at the admissible root");
    } else {
        let r = diag.residuals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        report.push("system_residual", r, SYSTEM_RESIDUAL_TOL * scale, "largest per-trader equation residual");
    }

    let simulable = params.dt() > 0.0 && horizon(params, sim.tail_tol).is_ok();
    if eq.tax != 0.0 || params.dt() == 0.0 {
        report.skip("lemma_identity", "value functions need dt > 0 and no tax");
        report.skip("dpe_grid", "value functions need dt > 0 and no tax");
    } else {
        let mut lemma = 0.0f64;
        let mut dpe = 0.0f64;
        for i in 0..eq.k() {
            let v = value_coefficients(&eq, i, params)?;
            lemma = lemma.max(lemma_identity_residual(&v, &eq, i, params));
            dpe = dpe.max(dpe_residual(&v, &eq, i, params, &default_dpe_grid(&eq, i, params)).max_scaled);
        }
        report.push("lemma_identity", lemma, LEMMA_IDENTITY_TOL * scale, "|F + gamma dt - lambda phi / (1 - phi)|");
        report.push("dpe_grid", dpe, DPE_TOL * scale, "max |lhs - rhs| / (1 + |v|) over 125 states");
    }

    if !simulable {
        for name in ["zero_profit", "impact_slope", "moment", "deviation_argmax"] {
            report.skip(name, "no finite simulation horizon for these parameters");
        }
        return Ok(report);
    }

    let cfg = sim_config(sim);
    let rounds = 1000;
    let batch = simulate(&eq, &vec![StrategySpec::Equilibrium; params.k()], params, &SimConfig {
        horizon: Some(rounds),
        ..cfg.clone()
    })?;
    let dealer = dealer_profit_check(&batch, &eq);
    report.push(
        "zero_profit",
        dealer.profit.z_score(0.0).abs(),
        1.96,
        format!("dealer profit per round {:.3e} +- {:.1e}", dealer.profit.mean, dealer.profit.std_error),
    );
    report.push(
        "impact_slope",
        dealer.slope.z_score(eq.lambda).abs(),
        PROFIT_SLOPE_SE,
        format!("slope {:.6} +- {:.1e} vs lambda {:.6}", dealer.slope.mean, dealer.slope.std_error, eq.lambda),
    );

    let steps = [1usize, 10, 100];
    let m0 = params.trader(0).initial_inventory;
    let mc = prediction_second_moment_mc(m0, eq.betas[0], eq.phis[0], params, &steps, sim.paths, sim.seed);
    let worst = steps
        .iter()
        .zip(&mc)
        .map(|(&n, e)| e.z_score(inventory_second_moment(m0, eq.betas[0], eq.phis[0], params, n as u64)).abs())
        .fold(0.0f64, f64::max);
    report.push("moment", worst, MOMENT_SE, "largest |z| of E[M_n^2] at n = 1, 10, 100");

    let grid: Vec<StrategySpec> = [0.8, 0.9, 1.0, 1.1, 1.2]
        .iter()
        .map(|&s| StrategySpec::DeviationScaled { s_beta: s, s_phi: 1.0 })
        .collect();
    let table = deviation_sweep(&eq, 0, params, &grid, 2, &cfg)?;
    let worst_gap = table
        .rows
        .iter()
        .filter(|r| r.gap.std_error > 0.0)
        .map(|r| r.gap.mean / r.gap.std_error)
        .fold(f64::NEG_INFINITY, f64::max);
    report.push(
        "deviation_argmax",
        worst_gap.max(0.0),
        SWEEP_SLACK_SE,
        format!("largest paired gap over the equilibrium in SE; argmax at s_beta = {}", [0.8, 0.9, 1.0, 1.1, 1.2][table.argmax()]),
    );
    Ok(report)
}

/// Executes one command, writing its artifact to `--out` or `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let params = cli.params.resolve()?;
    let mut file;
    let out: &mut dyn Write = match &cli.out {
        Some(path) => {
            file = std::io::BufWriter::new(std::fs::File::create(path)?);
            &mut file
        }
        None => stdout,
    };
    let table_format = cli.format.unwrap_or(Format::Csv);
    match &cli.command {
        Command::Solve => emit_json(&solve_report(&params)?, out)?,
        Command::Expand => match cli.format.unwrap_or(Format::Json) {
            Format::Json => emit_json(&expand_report(&params), out)?,
            Format::Csv => write_expansion_csv(&params, out)?,
        },
        Command::Sweep { dt_grid, k_grid } => {
            let table = match (dt_grid, k_grid) {
                (_, Some(range)) => k_sweep(&params, *range)?,
                (Some(grid), None) => dt_sweep(&params, &grid.points())?,
                (None, None) => dt_sweep(&params, &GeomGrid { a: 1e-2, b: 1e-6, n: 9 }.points())?,
            };
            emit_table(&table, table_format, out)?;
        }
        Command::TaxSweep { c_grid } => emit_table(&tax_sweep(&params, &c_grid.points())?, table_format, out)?,
        Command::Simulate { sim, rounds, frame, paths_csv } => {
            emit_json(&simulate_report(&params, sim, *rounds, frame.as_ref(), paths_csv.as_ref())?, out)?
        }
        Command::Verify { sim, strict } => {
            let report = verify(&params, sim, *strict)?;
            emit_json(&report, out)?;
            out.flush()?;
            let failed = report.failures();
            if !failed.is_empty() {
                return Err(CliError::VerificationFailed(failed));
            }
        }
    }
    out.flush()?;
    Ok(())
}
