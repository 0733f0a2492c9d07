//! Seeded Monte Carlo simulation of the discrete market.
//!
//! Each path owns a ChaCha8 stream selected by `(seed, path index)`, and
//! every step consumes exactly two standard normals in a fixed order (value
//! increment, then noise flow). Paths are simulated in parallel and reduced
//! in path order, so results do not depend on the thread count.
//!
//! Two engines share the same draws:
//! - [`simulate`] materialises a [`PathBatch`] for moment checks and export;
//! - [`deviation_sweep`] streams paths and evaluates several strategies for
//!   one trader against common random numbers without storing anything.

use crate::model::ValidatedParams;
use crate::solver::Equilibrium;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_TAIL_TOL: f64 = 1e-6;
pub const MAX_HORIZON: usize = 10_000_000;
/// Magic bytes opening a binary path frame.
pub const FRAME_MAGIC: &[u8; 8] = b"PATHBAT1";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon of {needed} steps needed for tail tolerance {tail_tol} exceeds the cap")]
    HorizonCap { needed: f64, tail_tol: f64 },
    #[error("horizon too short: discount^N = {tail} exceeds tail tolerance {tail_tol}")]
    HorizonTooShort { tail: f64, tail_tol: f64 },
    #[error("strategy for trader {trader} is not admissible: {reason}")]
    Inadmissible { trader: usize, reason: String },
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed path frame: {0}")]
    Frame(String),
}

/// Trading rule of one trader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    /// `dL = beta dS - phi M_prev`.
    Equilibrium,
    /// `dL = s_beta beta dS - s_phi phi L_prev`, a linear rule on own inventory.
    DeviationScaled { s_beta: f64, s_phi: f64 },
    /// `dL = beta dS - phi M_prev - zeta_prime Z_prev`.
    DeviationWithZ { zeta_prime: f64 },
}

impl StrategySpec {
    /// Rejects rules whose inventory second moment is unbounded.
    pub fn check_admissible(&self, eq: &Equilibrium, trader: usize) -> Result<(), SimError> {
        let reason = match *self {
            StrategySpec::Equilibrium => None,
            StrategySpec::DeviationScaled { s_beta, s_phi } => {
                let phi = s_phi * eq.phis[trader];
                if !s_beta.is_finite() || !is_bounded(phi) {
                    Some(format!("phi' = {phi} outside (0, 2)"))
                } else {
                    None
                }
            }
            StrategySpec::DeviationWithZ { zeta_prime } => {
                if !(0.0..2.0).contains(&zeta_prime) {
                    Some(format!("zeta' = {zeta_prime} outside [0, 2)"))
                } else {
                    None
                }
            }
        };
        match reason {
            Some(reason) => Err(SimError::Inadmissible { trader, reason }),
            None => Ok(()),
        }
    }

    #[inline]
    fn trade(&self, beta: f64, phi: f64, ds: f64, l_prev: f64, m_prev: f64) -> f64 {
        match *self {
            StrategySpec::Equilibrium => beta * ds - phi * m_prev,
            StrategySpec::DeviationScaled { s_beta, s_phi } => s_beta * beta * ds - s_phi * phi * l_prev,
            StrategySpec::DeviationWithZ { zeta_prime } => beta * ds - phi * m_prev - zeta_prime * (l_prev - m_prev),
        }
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub ci95: (f64, f64),
}

impl Estimate {
    pub fn new(mean: f64, std_error: f64, n_samples: usize) -> Self {
        Self { mean, std_error, n_samples, ci95: (mean - 1.96 * std_error, mean + 1.96 * std_error) }
    }

    /// Sample mean and standard error of the mean, summed in slice order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self::new(mean, (var / n as f64).sqrt(), n)
    }

    pub fn ci_covers(&self, x: f64) -> bool {
        self.ci95.0 <= x && x <= self.ci95.1
    }

    /// Distance from `x` in standard errors.
    pub fn z_score(&self, x: f64) -> f64 {
        (self.mean - x) / self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Fixed horizon; derived from `tail_tol` when absent.
    pub horizon: Option<usize>,
    pub tail_tol: f64,
    /// Starting `Z_0 = L_0 - M_0` per trader; empty means all zero.
    pub initial_deviation: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_paths: 1000, seed: 0, horizon: None, tail_tol: DEFAULT_TAIL_TOL, initial_deviation: Vec::new() }
    }
}

impl SimConfig {
    fn z0(&self, trader: usize) -> f64 {
        self.initial_deviation.get(trader).copied().unwrap_or(0.0)
    }

    fn resolve_horizon(&self, params: &ValidatedParams) -> Result<usize, SimError> {
        match self.horizon {
            Some(n) => Ok(n),
            None => horizon(params, self.tail_tol),
        }
    }
}

/// Smallest `N` with `(1 - rho_min dt)^N <= tail_tol`.
pub fn horizon(params: &ValidatedParams, tail_tol: f64) -> Result<usize, SimError> {
    if !(tail_tol > 0.0 && tail_tol < 1.0) || !(params.dt() > 0.0) {
        return Err(SimError::Precondition("horizon needs dt > 0 and tail_tol in (0, 1)".into()));
    }
    let rho_min = params.traders().iter().map(|t| t.rho).fold(f64::INFINITY, f64::min);
    let needed = (tail_tol.ln() / (1.0 - rho_min * params.dt()).ln()).ceil();
    if needed > MAX_HORIZON as f64 {
        return Err(SimError::HorizonCap { needed, tail_tol });
    }
    Ok(needed.max(1.0) as usize)
}

/// Normal draws for one path. Step `n` consumes `(dS, dK)` in that order.
#[derive(Debug, Clone)]
pub struct PathRng(ChaCha8Rng);

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self(rng)
    }

    /// Standard normal pair `(z_S, z_K)` for the next step.
    #[inline]
    pub fn next_pair(&mut self) -> (f64, f64) {
        let zs: f64 = StandardNormal.sample(&mut self.0);
        let zk: f64 = StandardNormal.sample(&mut self.0);
        (zs, zk)
    }
}

/// Stored trajectories. Per-step arrays are path-major with `horizon`
/// entries per path; per-trader arrays add a trailing trader axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub n_paths: usize,
    pub horizon: usize,
    pub k: usize,
    pub seed: u64,
    pub dt: f64,
    pub ds: Vec<f64>,
    pub dk: Vec<f64>,
    pub dy: Vec<f64>,
    /// `P_n - S_{n-1} = lambda dY_n + sum_j mu_j M^j_{n-1}`.
    pub price_adj: Vec<f64>,
    pub inventory: Vec<f64>,
    pub prediction: Vec<f64>,
    pub deviation: Vec<f64>,
    /// Per-period term `(dS - price_adj) dL - gamma dt / 2 L^2`.
    pub payoff: Vec<f64>,
    /// `L_{n-1} dS_n`, the mark-to-market gain left out of the payoff.
    pub mark_to_market: Vec<f64>,
    pub initial_inventory: Vec<f64>,
    pub initial_prediction: Vec<f64>,
}

impl PathBatch {
    #[inline]
    pub fn idx(&self, path: usize, n: usize) -> usize {
        path * self.horizon + (n - 1)
    }

    #[inline]
    pub fn tidx(&self, path: usize, n: usize, j: usize) -> usize {
        self.idx(path, n) * self.k + j
    }

    /// `M^j_{n-1}`, using the initial value at `n = 1`.
    pub fn prev_prediction(&self, path: usize, n: usize, j: usize) -> f64 {
        if n == 1 {
            self.initial_prediction[j]
        } else {
            self.prediction[self.tidx(path, n - 1, j)]
        }
    }

    pub fn prev_inventory(&self, path: usize, n: usize, j: usize) -> f64 {
        if n == 1 {
            self.initial_inventory[j]
        } else {
            self.inventory[self.tidx(path, n - 1, j)]
        }
    }

    /// Trade `dL^j_n`.
    pub fn trade(&self, path: usize, n: usize, j: usize) -> f64 {
        self.inventory[self.tidx(path, n, j)] - self.prev_inventory(path, n, j)
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["path", "n", "dS", "dK", "price_adj"].iter().map(|s| s.to_string()).collect();
        for j in 0..self.k {
            cols.extend([format!("L_{j}"), format!("M_{j}"), format!("payoff_{j}")]);
        }
        cols
    }

    fn row(&self, path: usize, n: usize) -> Vec<f64> {
        let i = self.idx(path, n);
        let mut row = vec![path as f64, n as f64, self.ds[i], self.dk[i], self.price_adj[i]];
        for j in 0..self.k {
            let t = self.tidx(path, n, j);
            row.extend([self.inventory[t], self.prediction[t], self.payoff[t]]);
        }
        row
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.column_names())?;
        for p in 0..self.n_paths {
            for n in 1..=self.horizon {
                let row = self.row(p, n);
                let mut rec: Vec<String> = vec![p.to_string(), n.to_string()];
                rec.extend(row[2..].iter().map(|x| format!("{x:e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the CSV columns as a binary frame (see [`read_frame`]).
    pub fn write_frame<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        let cols = self.column_names().len();
        out.write_all(FRAME_MAGIC)?;
        out.write_all(&((self.n_paths * self.horizon) as u64).to_le_bytes())?;
        out.write_all(&(cols as u64).to_le_bytes())?;
        for p in 0..self.n_paths {
            for n in 1..=self.horizon {
                for x in self.row(p, n) {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_frame(&self, path: &Path) -> Result<(), SimError> {
        let file = std::fs::File::create(path)?;
        self.write_frame(std::io::BufWriter::new(file))
    }
}

/// Row-major frame contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Reads `PATHBAT1 | rows: u64 | cols: u64 | rows*cols f64`, all little-endian.
pub fn read_frame<R: Read>(mut input: R) -> Result<Frame, SimError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != FRAME_MAGIC {
        return Err(SimError::Frame("bad magic".into()));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows.checked_mul(cols).ok_or_else(|| SimError::Frame("dimensions overflow".into()))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        input.read_exact(&mut word).map_err(|_| SimError::Frame("truncated payload".into()))?;
        data.push(f64::from_le_bytes(word));
    }
    if input.read(&mut word)? != 0 {
        return Err(SimError::Frame("trailing bytes".into()));
    }
    Ok(Frame { rows, cols, data })
}

fn check_inputs(
    eq: &Equilibrium,
    strategies: &[StrategySpec],
    params: &ValidatedParams,
    cfg: &SimConfig,
) -> Result<(), SimError> {
    if eq.k() != params.k() || strategies.len() != params.k() {
        return Err(SimError::Precondition("one strategy per trader is required".into()));
    }
    if cfg.n_paths == 0 {
        return Err(SimError::Precondition("n_paths must be at least 1".into()));
    }
    if !(params.dt() > 0.0) {
        return Err(SimError::Precondition("simulation needs dt > 0".into()));
    }
    for (i, s) in strategies.iter().enumerate() {
        s.check_admissible(eq, i)?;
    }
    Ok(())
}

struct PathRecord {
    ds: Vec<f64>,
    dk: Vec<f64>,
    dy: Vec<f64>,
    price_adj: Vec<f64>,
    inventory: Vec<f64>,
    prediction: Vec<f64>,
    payoff: Vec<f64>,
    mark_to_market: Vec<f64>,
}

/// Simulates `cfg.n_paths` paths and stores every quantity.
pub fn simulate(
    eq: &Equilibrium,
    strategies: &[StrategySpec],
    params: &ValidatedParams,
    cfg: &SimConfig,
) -> Result<PathBatch, SimError> {
    check_inputs(eq, strategies, params, cfg)?;
    let n_steps = cfg.resolve_horizon(params)?;
    let k = params.k();
    let dt = params.dt();
    let (sd_s, sd_k) = (params.sigma_s() * dt.sqrt(), params.sigma_k() * dt.sqrt());
    let m0: Vec<f64> = params.traders().iter().map(|t| t.initial_inventory).collect();
    let l0: Vec<f64> = (0..k).map(|j| m0[j] + cfg.z0(j)).collect();
    let half_cost: Vec<f64> = params.traders().iter().map(|t| 0.5 * t.gamma * dt).collect();

    let records: Vec<PathRecord> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = PathRng::new(cfg.seed, path as u64);
            let mut rec = PathRecord {
                ds: Vec::with_capacity(n_steps),
                dk: Vec::with_capacity(n_steps),
                dy: Vec::with_capacity(n_steps),
                price_adj: Vec::with_capacity(n_steps),
                inventory: Vec::with_capacity(n_steps * k),
                prediction: Vec::with_capacity(n_steps * k),
                payoff: Vec::with_capacity(n_steps * k),
                mark_to_market: Vec::with_capacity(n_steps * k),
            };
            let mut l = l0.clone();
            let mut m = m0.clone();
            let mut trades = vec![0.0; k];
            for _ in 0..n_steps {
                let (zs, zk) = rng.next_pair();
                let (ds, dk) = (sd_s * zs, sd_k * zk);
                let mut dy = dk;
                let mut anticipated = 0.0;
                for j in 0..k {
                    trades[j] = strategies[j].trade(eq.betas[j], eq.phis[j], ds, l[j], m[j]);
                    dy += trades[j];
                    anticipated += eq.mus[j] * m[j];
                }
                let price_adj = eq.lambda * dy + anticipated;
                for j in 0..k {
                    let l_prev = l[j];
                    l[j] += trades[j];
                    m[j] += eq.betas[j] * ds - eq.phis[j] * m[j];
                    rec.inventory.push(l[j]);
                    rec.prediction.push(m[j]);
                    rec.payoff.push((ds - price_adj) * trades[j] - half_cost[j] * l[j] * l[j]);
                    rec.mark_to_market.push(l_prev * ds);
                }
                rec.ds.push(ds);
                rec.dk.push(dk);
                rec.dy.push(dy);
                rec.price_adj.push(price_adj);
            }
            rec
        })
        .collect();

    let total = cfg.n_paths * n_steps;
    let mut batch = PathBatch {
        n_paths: cfg.n_paths,
        horizon: n_steps,
        k,
        seed: cfg.seed,
        dt,
        ds: Vec::with_capacity(total),
        dk: Vec::with_capacity(total),
        dy: Vec::with_capacity(total),
        price_adj: Vec::with_capacity(total),
        inventory: Vec::with_capacity(total * k),
        prediction: Vec::with_capacity(total * k),
        deviation: Vec::with_capacity(total * k),
        payoff: Vec::with_capacity(total * k),
        mark_to_market: Vec::with_capacity(total * k),
        initial_inventory: l0,
        initial_prediction: m0,
    };
    for r in records {
        batch.ds.extend(r.ds);
        batch.dk.extend(r.dk);
        batch.dy.extend(r.dy);
        batch.price_adj.extend(r.price_adj);
        batch.deviation.extend(r.inventory.iter().zip(&r.prediction).map(|(l, m)| l - m));
        batch.inventory.extend(r.inventory);
        batch.prediction.extend(r.prediction);
        batch.payoff.extend(r.payoff);
        batch.mark_to_market.extend(r.mark_to_market);
    }
    Ok(batch)
}

fn check_tail(discount: f64, n: usize, tail_tol: f64) -> Result<(), SimError> {
    let tail = discount.powi(n.min(i32::MAX as usize) as i32);
    if tail > tail_tol {
        return Err(SimError::HorizonTooShort { tail, tail_tol });
    }
    Ok(())
}

fn discounted_per_path(batch: &PathBatch, trader: usize, discount: f64, series: &[f64]) -> Vec<f64> {
    (0..batch.n_paths)
        .map(|p| {
            let mut w = 1.0;
            let mut acc = 0.0;
            for n in 1..=batch.horizon {
                w *= discount;
                acc += w * series[batch.tidx(p, n, trader)];
            }
            acc
        })
        .collect()
}

/// Discounted objective `sum_n (1 - rho dt)^n payoff_n` of one trader, averaged over paths.
pub fn estimate_objective(batch: &PathBatch, trader: usize, rho: f64, tail_tol: f64) -> Result<Estimate, SimError> {
    let discount = 1.0 - rho * batch.dt;
    check_tail(discount, batch.horizon, tail_tol)?;
    Ok(Estimate::from_samples(&discounted_per_path(batch, trader, discount, &batch.payoff)))
}

/// Discounted sum of the omitted `L_{n-1} dS_n` terms.
pub fn estimate_mark_to_market(batch: &PathBatch, trader: usize, rho: f64) -> Estimate {
    let discount = 1.0 - rho * batch.dt;
    Estimate::from_samples(&discounted_per_path(batch, trader, discount, &batch.mark_to_market))
}

/// Objective with the mark-to-market gain added back in.
pub fn estimate_total_wealth(batch: &PathBatch, trader: usize, rho: f64, tail_tol: f64) -> Result<Estimate, SimError> {
    let discount = 1.0 - rho * batch.dt;
    check_tail(discount, batch.horizon, tail_tol)?;
    let a = discounted_per_path(batch, trader, discount, &batch.payoff);
    let b = discounted_per_path(batch, trader, discount, &batch.mark_to_market);
    let total: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    Ok(Estimate::from_samples(&total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DealerCheck {
    /// Dealer profit per round, with standard error over per-path averages.
    pub profit: Estimate,
    /// Slope of `dS` on `X = dY + sum_j phi_j M^j_{n-1}` through the origin.
    pub slope: Estimate,
    pub lambda: f64,
}

impl DealerCheck {
    /// Profit CI covers zero and the slope is within `n_se` errors of `lambda`.
    pub fn passes(&self, n_se: f64) -> bool {
        self.profit.ci_covers(0.0) && self.slope.z_score(self.lambda).abs() <= n_se
    }
}

/// Zero-profit check for the dealers' pricing rule of `eq`.
pub fn dealer_profit_check(batch: &PathBatch, eq: &Equilibrium) -> DealerCheck {
    dealer_profit_check_with(batch, eq, eq.lambda)
}

/// Same check with the dealers pricing at `lambda` and `mu_j = lambda phi_j`.
pub fn dealer_profit_check_with(batch: &PathBatch, eq: &Equilibrium, lambda: f64) -> DealerCheck {
    let mut per_path = Vec::with_capacity(batch.n_paths);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for p in 0..batch.n_paths {
        let mut acc = 0.0;
        for n in 1..=batch.horizon {
            let i = batch.idx(p, n);
            let carried: f64 = (0..batch.k).map(|j| eq.phis[j] * batch.prev_prediction(p, n, j)).sum();
            let x = batch.dy[i] + carried;
            acc += (lambda * x - batch.ds[i]) * batch.dy[i];
            sxy += x * batch.ds[i];
            sxx += x * x;
            syy += batch.ds[i] * batch.ds[i];
        }
        per_path.push(acc / batch.horizon as f64);
    }
    let count = batch.n_paths * batch.horizon;
    let slope = sxy / sxx;
    let rss = (syy - slope * sxy).max(0.0);
    let resid_var = rss / (count as f64 - 1.0);
    let mut profit = Estimate::from_samples(&per_path);
    profit.n_samples = count;
    DealerCheck { profit, slope: Estimate::new(slope, (resid_var / sxx).sqrt(), count), lambda }
}

/// `max |full - reduced|` over all paths and steps of trader `i`'s period term,
/// where the reduced form prices with `eta`-style aggregation over the other
/// traders' equilibrium trades.
pub fn tractability_witness(batch: &PathBatch, eq: &Equilibrium, params: &ValidatedParams, trader: usize) -> f64 {
    let others: f64 = (0..batch.k).filter(|&j| j != trader).map(|j| eq.betas[j]).sum();
    let half_cost = 0.5 * params.trader(trader).gamma * batch.dt;
    let mut worst = 0.0f64;
    for p in 0..batch.n_paths {
        for n in 1..=batch.horizon {
            let i = batch.idx(p, n);
            let dl = batch.trade(p, n, trader);
            let l = batch.inventory[batch.tidx(p, n, trader)];
            let m_prev = batch.prev_prediction(p, n, trader);
            let reduced = ((1.0 - eq.lambda * others) * batch.ds[i]
                - eq.lambda * batch.dk[i]
                - eq.lambda * dl
                - eq.mus[trader] * m_prev)
                * dl
                - half_cost * l * l;
            worst = worst.max((batch.payoff[batch.tidx(p, n, trader)] - reduced).abs());
        }
    }
    worst
}

/// `phi` for which the prediction process has a bounded second moment.
pub fn is_bounded(phi: f64) -> bool {
    phi > 0.0 && phi < 2.0
}

/// `E[M_n^2] = (1 - phi)^{2n} M_0^2 + beta^2 sigma_S^2 dt S_n` with
/// `S_n = sum_{j<n} (1 - phi)^{2j}`.
pub fn inventory_second_moment(m0: f64, beta: f64, phi: f64, params: &ValidatedParams, n: u64) -> f64 {
    second_moment(m0, beta, phi, params.sigma_s(), params.dt(), n)
}

fn second_moment(m0: f64, beta: f64, phi: f64, sigma_s: f64, dt: f64, n: u64) -> f64 {
    let q = (1.0 - phi).powi(2);
    let qn = q.powf(n as f64);
    let sum = if (q - 1.0).abs() < f64::EPSILON {
        n as f64
    } else {
        (1.0 - qn) / (1.0 - q)
    };
    qn * m0 * m0 + beta * beta * sigma_s * sigma_s * dt * sum
}

/// Limit of `E[M_n^2]` for `phi` in `(0, 2)`.
pub fn stationary_second_moment(beta: f64, phi: f64, sigma_s: f64, dt: f64) -> f64 {
    beta * beta * sigma_s * sigma_s * dt / (1.0 - (1.0 - phi).powi(2))
}

/// Monte Carlo `E[M_n^2]` at each step in `steps` for
/// `dM_n = beta dS_n - phi M_{n-1}` started at `m0`.
pub fn prediction_second_moment_mc(
    m0: f64,
    beta: f64,
    phi: f64,
    params: &ValidatedParams,
    steps: &[usize],
    n_paths: usize,
    seed: u64,
) -> Vec<Estimate> {
    let last = steps.iter().copied().max().unwrap_or(0);
    let sd_s = params.sigma_s() * params.dt().sqrt();
    let samples: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = PathRng::new(seed, path as u64);
            let mut m = m0;
            let mut out = Vec::with_capacity(steps.len());
            let mut values = vec![0.0; last + 1];
            values[0] = m0 * m0;
            for v in values.iter_mut().skip(1) {
                let (zs, _) = rng.next_pair();
                m += beta * sd_s * zs - phi * m;
                *v = m * m;
            }
            for &s in steps {
                out.push(values[s]);
            }
            out
        })
        .collect();
    (0..steps.len())
        .map(|c| Estimate::from_samples(&samples.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub spec: StrategySpec,
    pub objective: Estimate,
    /// Paired difference `row - reference` over common draws.
    pub gap: Estimate,
    pub mark_to_market: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub trader: usize,
    pub reference: usize,
    pub horizon: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Row with the largest mean objective.
    pub fn argmax(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.objective.mean.total_cmp(&b.1.objective.mean))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// The reference row is no worse than any row by more than `slack` paired standard errors.
    pub fn reference_dominates(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| r.gap.mean <= slack * r.gap.std_error)
    }
}

/// Discounted sums of one path, one entry per sweep row.
struct PathTotals {
    objective: Vec<f64>,
    mark_to_market: Vec<f64>,
}

/// Evaluates each strategy in `grid` for `trader`, with everyone else on
/// the equilibrium rule, over common draws. `reference` indexes the row
/// that gaps are measured against.
pub fn deviation_sweep(
    eq: &Equilibrium,
    trader: usize,
    params: &ValidatedParams,
    grid: &[StrategySpec],
    reference: usize,
    cfg: &SimConfig,
) -> Result<SweepTable, SimError> {
    if trader >= params.k() || reference >= grid.len() {
        return Err(SimError::Precondition("trader or reference row out of range".into()));
    }
    check_inputs(eq, &vec![StrategySpec::Equilibrium; params.k()], params, cfg)?;
    for s in grid {
        s.check_admissible(eq, trader)?;
    }
    let n_steps = cfg.resolve_horizon(params)?;
    let discount = params.discount(trader);
    check_tail(discount, n_steps, cfg.tail_tol)?;

    let k = params.k();
    let dt = params.dt();
    let (sd_s, sd_k) = (params.sigma_s() * dt.sqrt(), params.sigma_k() * dt.sqrt());
    let m0: Vec<f64> = params.traders().iter().map(|t| t.initial_inventory).collect();
    let l0: Vec<f64> = (0..k).map(|j| m0[j] + cfg.z0(j)).collect();
    let half_cost = 0.5 * params.trader(trader).gamma * dt;
    let rows = grid.len();

    // per path: objective and mark-to-market for each row
    let per_path: Vec<PathTotals> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = PathRng::new(cfg.seed, path as u64);
            let mut m = m0.clone();
            let mut l_own = vec![l0[trader]; rows];
            let mut obj = vec![0.0; rows];
            let mut mtm = vec![0.0; rows];
            let mut w = 1.0;
            for _ in 0..n_steps {
                let (zs, zk) = rng.next_pair();
                let (ds, dk) = (sd_s * zs, sd_k * zk);
                w *= discount;
                let mut base_flow = dk;
                let mut anticipated = 0.0;
                for (j, &mj) in m.iter().enumerate() {
                    anticipated += eq.mus[j] * mj;
                    if j != trader {
                        base_flow += eq.betas[j] * ds - eq.phis[j] * mj;
                    }
                }
                let (beta, phi, m_own) = (eq.betas[trader], eq.phis[trader], m[trader]);
                for r in 0..rows {
                    let l_prev = l_own[r];
                    let dl = grid[r].trade(beta, phi, ds, l_prev, m_own);
                    let price_adj = eq.lambda * (base_flow + dl) + anticipated;
                    let l = l_prev + dl;
                    obj[r] += w * ((ds - price_adj) * dl - half_cost * l * l);
                    mtm[r] += w * l_prev * ds;
                    l_own[r] = l;
                }
                for ((mj, beta), phi) in m.iter_mut().zip(&eq.betas).zip(&eq.phis) {
                    *mj += beta * ds - phi * *mj;
                }
            }
            PathTotals { objective: obj, mark_to_market: mtm }
        })
        .collect();

    let column = |f: &dyn Fn(&PathTotals) -> f64| -> Estimate {
        Estimate::from_samples(&per_path.iter().map(f).collect::<Vec<_>>())
    };
    let table_rows = (0..rows)
        .map(|r| SweepRow {
            spec: grid[r],
            objective: column(&|p| p.objective[r]),
            gap: column(&|p| p.objective[r] - p.objective[reference]),
            mark_to_market: column(&|p| p.mark_to_market[r]),
        })
        .collect();
    Ok(SweepTable { trader, reference, horizon: n_steps, rows: table_rows })
}

/// Objective of `trader` with every trader on the equilibrium rule, streamed
/// without storing paths. Returns `(objective, mark_to_market)`.
pub fn estimate_objective_streaming(
    eq: &Equilibrium,
    trader: usize,
    params: &ValidatedParams,
    cfg: &SimConfig,
) -> Result<(Estimate, Estimate), SimError> {
    let table = deviation_sweep(eq, trader, params, &[StrategySpec::Equilibrium], 0, cfg)?;
    let row = &table.rows[0];
    Ok((row.objective, row.mark_to_market))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, MarketParams};
    use crate::solver::solve_nash;

    fn setup(k: usize, dt: f64, rho: f64) -> (ValidatedParams, Equilibrium) {
        let p = validate(MarketParams::homogeneous(1.0, 1.0, dt, k, 1.0, rho)).unwrap();
        let (eq, _) = solve_nash(&p).unwrap();
        (p, eq)
    }

    fn cfg(n_paths: usize, horizon: usize, seed: u64) -> SimConfig {
        SimConfig { n_paths, seed, horizon: Some(horizon), ..SimConfig::default() }
    }

    #[test]
    fn estimate_interval() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!((e.ci95.1 - e.mean - 1.96 * e.std_error).abs() < 1e-15);
        assert!(e.ci_covers(2.5) && !e.ci_covers(10.0));
    }

    #[test]
    fn horizon_from_tail_tolerance() {
        let (p, _) = setup(1, 0.004, 0.05);
        let n = horizon(&p, 1e-6).unwrap();
        assert!(0.9998f64.powi(n as i32) <= 1e-6);
        assert!(0.9998f64.powi(n as i32 - 1) > 1e-6);
        let tiny = p.with_dt(1e-9).unwrap();
        assert!(matches!(horizon(&tiny, 1e-6), Err(SimError::HorizonCap { .. })));
    }

    #[test]
    fn path_streams_are_reproducible_and_distinct() {
        let mut a = PathRng::new(7, 3);
        let mut b = PathRng::new(7, 3);
        let mut c = PathRng::new(7, 4);
        let xs: Vec<_> = (0..5).map(|_| a.next_pair()).collect();
        let ys: Vec<_> = (0..5).map(|_| b.next_pair()).collect();
        let zs: Vec<_> = (0..5).map(|_| c.next_pair()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn three_step_recursion_by_hand() {
        let (p, eq) = setup(2, 0.01, 0.05);
        let batch = simulate(&eq, &[StrategySpec::Equilibrium; 2], &p, &cfg(1, 3, 11)).unwrap();
        let mut rng = PathRng::new(11, 0);
        let sd = 0.01f64.sqrt();
        let mut m = [0.0, 0.0];
        for n in 1..=3 {
            let (zs, zk) = rng.next_pair();
            let (ds, dk) = (sd * zs, sd * zk);
            let dl: Vec<f64> = (0..2).map(|j| eq.betas[j] * ds - eq.phis[j] * m[j]).collect();
            let dy = dk + dl[0] + dl[1];
            let adj = eq.lambda * dy + (eq.mus[0] * m[0] + eq.mus[1] * m[1]);
            for j in 0..2 {
                m[j] += dl[j];
            }
            let i = batch.idx(0, n);
            assert_eq!(batch.ds[i], ds);
            assert_eq!(batch.dy[i], dy);
            assert_eq!(batch.price_adj[i], adj);
            for j in 0..2 {
                let t = batch.tidx(0, n, j);
                assert_eq!(batch.inventory[t], m[j]);
                let want = (ds - adj) * dl[j] - 0.5 * 0.01 * m[j] * m[j];
                assert!((batch.payoff[t] - want).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn equilibrium_inventory_equals_prediction() {
        let (p, eq) = setup(3, 0.004, 0.05);
        let batch = simulate(&eq, &[StrategySpec::Equilibrium; 3], &p, &cfg(20, 200, 1)).unwrap();
        assert!(batch.deviation.iter().all(|&z| z == 0.0));
        assert_eq!(batch.inventory, batch.prediction);
    }

    #[test]
    fn order_flow_variance() {
        let (p, eq) = setup(1, 0.004, 0.05);
        let batch = simulate(&eq, &[StrategySpec::Equilibrium], &p, &cfg(200, 500, 5)).unwrap();
        let xs: Vec<f64> = (0..batch.n_paths)
            .flat_map(|q| (1..=batch.horizon).map(move |n| (q, n)))
            .map(|(q, n)| {
                let x = batch.dy[batch.idx(q, n)] + eq.phis[0] * batch.prev_prediction(q, n, 0);
                x * x
            })
            .collect();
        let est = Estimate::from_samples(&xs);
        let want = (1.0 + eq.beta_sigma.powi(2)) * 0.004;
        assert!(est.z_score(want).abs() < 4.0, "{est:?} vs {want}");
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (p, eq) = setup(2, 0.004, 0.05);
        let strategies = [StrategySpec::Equilibrium, StrategySpec::DeviationScaled { s_beta: 1.1, s_phi: 0.9 }];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let b = simulate(&eq, &strategies, &p, &cfg(37, 50, 9)).unwrap();
                let c = SimConfig { tail_tol: 1.0 - 1e-12, ..cfg(37, 50, 9) };
                let s = deviation_sweep(&eq, 1, &p, &strategies, 0, &c).unwrap();
                (b, s)
            })
        };
        let (b1, s1) = run(1);
        let (b4, s4) = run(4);
        assert_eq!(b1, b4);
        assert_eq!(s1, s4);
    }

    #[test]
    fn sweep_matches_stored_batch() {
        let (p, eq) = setup(2, 0.004, 0.05);
        let dev = StrategySpec::DeviationScaled { s_beta: 1.2, s_phi: 1.0 };
        let c = cfg(10, 300, 3);
        let batch = simulate(&eq, &[StrategySpec::Equilibrium, dev], &p, &c).unwrap();
        let table = deviation_sweep(&eq, 1, &p, &[StrategySpec::Equilibrium, dev], 0, &SimConfig { tail_tol: 1.0 - 1e-12, ..c.clone() }).unwrap();
        let direct = estimate_objective(&batch, 1, 0.05, 1.0 - 1e-12).unwrap();
        assert!((table.rows[1].objective.mean - direct.mean).abs() < 1e-12);
        let mtm = estimate_mark_to_market(&batch, 1, 0.05);
        assert!((table.rows[1].mark_to_market.mean - mtm.mean).abs() < 1e-12);
    }

    #[test]
    fn short_horizon_is_refused() {
        let (p, eq) = setup(1, 0.004, 0.05);
        let batch = simulate(&eq, &[StrategySpec::Equilibrium], &p, &cfg(2, 10, 0)).unwrap();
        assert!(matches!(estimate_objective(&batch, 0, 0.05, 1e-6), Err(SimError::HorizonTooShort { .. })));
    }

    #[test]
    fn inadmissible_deviations_are_refused() {
        let (p, eq) = setup(1, 0.004, 0.05);
        let phi = eq.phis[0];
        let too_fast = StrategySpec::DeviationScaled { s_beta: 1.0, s_phi: 2.5 / phi };
        assert!(matches!(
            simulate(&eq, &[too_fast], &p, &cfg(1, 5, 0)),
            Err(SimError::Inadmissible { trader: 0, .. })
        ));
        let frozen = StrategySpec::DeviationScaled { s_beta: 1.0, s_phi: 0.0 };
        assert!(frozen.check_admissible(&eq, 0).is_err());
        assert!(StrategySpec::DeviationWithZ { zeta_prime: 2.0 }.check_admissible(&eq, 0).is_err());
        assert!(StrategySpec::DeviationWithZ { zeta_prime: 0.0 }.check_admissible(&eq, 0).is_ok());
    }

    #[test]
    fn second_moment_closed_form() {
        assert_eq!(second_moment(2.0, 1.0, 0.5, 1.0, 1.0, 1), 2.0);
        for n in 1..5 {
            assert!((second_moment(3.0, 0.7, 1.0, 1.0, 0.5, n) - 0.49 * 0.5).abs() < 1e-15);
            assert!((second_moment(0.0, 1.0, 2.0, 1.0, 1.0, n) - n as f64).abs() < 1e-12);
            assert!((second_moment(1.5, 1.0, 0.0, 1.0, 1.0, n) - (2.25 + n as f64)).abs() < 1e-12);
        }
        assert!(is_bounded(1.0) && is_bounded(2.0 - 1e-9));
        assert!(!is_bounded(0.0) && !is_bounded(2.0));
    }

    #[test]
    fn frame_round_trip() {
        let (p, eq) = setup(2, 0.004, 0.05);
        let batch = simulate(&eq, &[StrategySpec::Equilibrium; 2], &p, &cfg(3, 4, 2)).unwrap();
        let mut bytes = Vec::new();
        batch.write_frame(&mut bytes).unwrap();
        let frame = read_frame(bytes.as_slice()).unwrap();
        assert_eq!((frame.rows, frame.cols), (12, 11));
        assert_eq!(frame.data[11 + 2], batch.ds[1]);
        assert_eq!(frame.data[11 * 5 + 8], batch.inventory[batch.tidx(1, 2, 1)]);
        bytes.truncate(bytes.len() - 3);
        assert!(read_frame(bytes.as_slice()).is_err());
    }

    #[test]
    fn csv_header() {
        let (p, eq) = setup(1, 0.004, 0.05);
        let batch = simulate(&eq, &[StrategySpec::Equilibrium], &p, &cfg(1, 2, 0)).unwrap();
        let mut out = Vec::new();
        batch.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "path,n,dS,dK,price_adj,L_0,M_0,payoff_0");
        assert_eq!(text.lines().count(), 3);
    }
}
