//! High-frequency limits and first-order corrections of the equilibrium
//! quantities, and empirical convergence orders of the exact solutions
//! toward them.

use crate::model::ValidatedParams;
use crate::solver::{solve_nash, SolveError};
use crate::value::{value_coefficients, ValueError};
use serde::Serialize;
use thiserror::Error;

/// Order of the remainder after the printed terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Remainder {
    /// `O(dt)`
    Dt,
    /// `O(dt^(3/2))`
    Dt32,
}

impl Remainder {
    pub fn order(self) -> f64 {
        match self {
            Remainder::Dt => 1.0,
            Remainder::Dt32 => 1.5,
        }
    }
}

/// `limit + half_order_coeff * sqrt(dt) + dt_coeff * dt`.
///
/// `dt_coeff` is nonzero only for the monopolist's price impact, whose first
/// correction is at order `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expansion {
    pub limit: f64,
    pub half_order_coeff: f64,
    pub dt_coeff: f64,
    pub stated_remainder: Remainder,
}

impl Expansion {
    fn sqrt_dt(limit: f64, half_order_coeff: f64) -> Self {
        Self {
            limit,
            half_order_coeff,
            dt_coeff: 0.0,
            stated_remainder: Remainder::Dt,
        }
    }

    pub fn evaluate(&self, dt: f64) -> f64 {
        self.limit + self.half_order_coeff * dt.sqrt() + self.dt_coeff * dt
    }
}

/// Printed expansions for a single trader.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonopolyExpansions {
    pub beta: Expansion,
    pub lambda: Expansion,
    pub phi: Expansion,
    pub mu: Expansion,
    #[serde(rename = "A")]
    pub a: Expansion,
    #[serde(rename = "B")]
    pub b: Expansion,
    #[serde(rename = "C")]
    pub c: Expansion,
    #[serde(rename = "D")]
    pub d: Expansion,
}

impl MonopolyExpansions {
    pub fn entries(&self) -> [(&'static str, &Expansion); 8] {
        [
            ("beta", &self.beta),
            ("lambda", &self.lambda),
            ("phi", &self.phi),
            ("mu", &self.mu),
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
        ]
    }
}

/// Uses trader 0's `gamma` and `rho` whatever `k` is.
pub fn monopoly_expansions(params: &ValidatedParams) -> MonopolyExpansions {
    let (ss, sk) = (params.sigma_s(), params.sigma_k());
    let t = params.trader(0);
    let (g, rho) = (t.gamma, t.rho);
    let sqrt2 = std::f64::consts::SQRT_2;
    let ratio = sk / ss;
    MonopolyExpansions {
        beta: Expansion::sqrt_dt(ratio, -(g * sk.powi(3) / (2.0 * ss.powi(3))).sqrt()),
        lambda: Expansion {
            limit: ss / (2.0 * sk),
            half_order_coeff: 0.0,
            dt_coeff: -g / 8.0,
            stated_remainder: Remainder::Dt32,
        },
        phi: Expansion::sqrt_dt(0.0, (2.0 * g * sk / ss).sqrt()),
        mu: Expansion::sqrt_dt(0.0, (g * ss / (2.0 * sk)).sqrt()),
        a: Expansion::sqrt_dt(0.0, sqrt2 / 4.0 * g.sqrt() * (ss / sk).sqrt()),
        b: Expansion::sqrt_dt(ratio, -sqrt2 / 4.0 * g.sqrt() * ratio.powf(1.5)),
        c: Expansion::sqrt_dt(0.0, 3.0 * sqrt2 / 4.0 * g.sqrt() * ratio.sqrt()),
        d: Expansion::sqrt_dt(
            ss * sk / (2.0 * rho),
            -sqrt2 / 8.0 * g.sqrt() * ss.sqrt() * sk.powf(1.5) / rho,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraderExpansions {
    pub beta: Expansion,
    pub phi: Expansion,
    pub mu: Expansion,
    #[serde(rename = "A")]
    pub a: Expansion,
    #[serde(rename = "B")]
    pub b: Expansion,
    #[serde(rename = "C")]
    pub c: Expansion,
    #[serde(rename = "D")]
    pub d: Expansion,
}

impl TraderExpansions {
    pub fn entries(&self) -> [(&'static str, &Expansion); 7] {
        [
            ("beta", &self.beta),
            ("phi", &self.phi),
            ("mu", &self.mu),
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashExpansions {
    pub beta_sigma: Expansion,
    pub lambda: Expansion,
    pub traders: Vec<TraderExpansions>,
}

pub fn nash_expansions(params: &ValidatedParams) -> NashExpansions {
    let (ss, sk) = (params.sigma_s(), params.sigma_k());
    let n = params.k();
    let k = n as f64;
    let s = sk / ss;
    let sum_sqrt_gamma: f64 = params.traders().iter().map(|t| t.gamma.sqrt()).sum();
    let mean_sqrt_gamma = sum_sqrt_gamma / k;
    let k14 = k.powf(0.25);
    let k34 = k.powf(0.75);
    let kp1 = 1.0 + k;

    let beta_sigma = Expansion::sqrt_dt(k.sqrt() * s, -kp1.sqrt() / (2.0 * k34) * sum_sqrt_gamma * s.powf(1.5));
    let lambda = Expansion::sqrt_dt(
        k.sqrt() / kp1 / s,
        k14 * (k - 1.0) / (2.0 * kp1.powf(1.5)) * mean_sqrt_gamma / s.sqrt(),
    );
    let traders = params
        .traders()
        .iter()
        .map(|t| {
            let gi = t.gamma.sqrt();
            let bracket = (2.0 + 6.0 * k) * mean_sqrt_gamma - 5.0 * kp1 * gi;
            TraderExpansions {
                beta: Expansion::sqrt_dt(
                    s / k.sqrt(),
                    -kp1.sqrt() / (2.0 * k34) * (2.0 * gi - mean_sqrt_gamma) * s.powf(1.5),
                ),
                phi: Expansion::sqrt_dt(0.0, kp1.sqrt() / k14 * gi * s.sqrt()),
                mu: Expansion::sqrt_dt(0.0, k14 / kp1.sqrt() * gi / s.sqrt()),
                a: Expansion::sqrt_dt(0.0, k14 / (2.0 * kp1.sqrt()) * gi / s.sqrt()),
                b: Expansion::sqrt_dt(
                    2.0 / (k.sqrt() * kp1) * s,
                    bracket / (2.0 * k34 * kp1.powf(1.5)) * s.powf(1.5),
                ),
                c: Expansion::sqrt_dt(0.0, 3.0 / (2.0 * k14 * kp1.sqrt()) * gi * s.sqrt()),
                d: Expansion::sqrt_dt(
                    ss * sk / (k.sqrt() * kp1 * t.rho),
                    bracket / (4.0 * k34 * kp1.powf(1.5)) * ss.sqrt() * sk.powf(1.5) / t.rho,
                ),
            }
        })
        .collect();
    NashExpansions {
        beta_sigma,
        lambda,
        traders,
    }
}

/// A scalar equilibrium or value-function quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Beta(usize),
    BetaSigma,
    Lambda,
    Phi(usize),
    Mu(usize),
    A(usize),
    B(usize),
    C(usize),
    D(usize),
}

impl Quantity {
    /// Printed expansion. For a single trader the monopolist's formulas are
    /// used, including the order-`dt` term of the price impact.
    pub fn expansion(self, params: &ValidatedParams) -> Expansion {
        if params.k() == 1 {
            let m = monopoly_expansions(params);
            return match self {
                Quantity::Beta(_) | Quantity::BetaSigma => m.beta,
                Quantity::Lambda => m.lambda,
                Quantity::Phi(_) => m.phi,
                Quantity::Mu(_) => m.mu,
                Quantity::A(_) => m.a,
                Quantity::B(_) => m.b,
                Quantity::C(_) => m.c,
                Quantity::D(_) => m.d,
            };
        }
        let n = nash_expansions(params);
        match self {
            Quantity::BetaSigma => n.beta_sigma,
            Quantity::Lambda => n.lambda,
            Quantity::Beta(i) => n.traders[i].beta,
            Quantity::Phi(i) => n.traders[i].phi,
            Quantity::Mu(i) => n.traders[i].mu,
            Quantity::A(i) => n.traders[i].a,
            Quantity::B(i) => n.traders[i].b,
            Quantity::C(i) => n.traders[i].c,
            Quantity::D(i) => n.traders[i].d,
        }
    }

    /// Exact value at the interval of `params`.
    pub fn exact(self, params: &ValidatedParams) -> Result<f64, ConvergenceError> {
        let (eq, _) = solve_nash(params)?;
        let coeffs = |i: usize| value_coefficients(&eq, i, params);
        Ok(match self {
            Quantity::Beta(i) => eq.betas[i],
            Quantity::BetaSigma => eq.beta_sigma,
            Quantity::Lambda => eq.lambda,
            Quantity::Phi(i) => eq.phis[i],
            Quantity::Mu(i) => eq.mus[i],
            Quantity::A(i) => coeffs(i)?.a,
            Quantity::B(i) => coeffs(i)?.b,
            Quantity::C(i) => coeffs(i)?.c,
            Quantity::D(i) => coeffs(i)?.d,
        })
    }
}

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("need at least {need} grid points, got {got}")]
    InsufficientGrid { need: usize, got: usize },
    #[error("invalid interval {0}")]
    InvalidInterval(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub exact: f64,
    pub expansion: f64,
    pub error: f64,
    /// Local order against the previous feasible row.
    pub order: Option<f64>,
}

/// A grid point where the exact solve failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfeasiblePoint {
    pub dt: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub infeasible: Vec<InfeasiblePoint>,
    pub stated_order: f64,
}

impl ConvergenceTable {
    /// Order estimate from the two finest feasible points.
    pub fn finest_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.order)
    }
}

/// `n` points from `a` to `b`, equally spaced in log scale.
pub fn geometric_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|j| {
            if j == 0 {
                a
            } else if j == n - 1 {
                b
            } else {
                (la + (lb - la) * j as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub const MIN_GRID_POINTS: usize = 4;

/// Exact-vs-expansion errors along `dt_grid` with local orders
/// `log(e_j / e_{j+1}) / log(dt_j / dt_{j+1})`.
pub fn convergence_order(
    quantity: Quantity,
    params: &ValidatedParams,
    dt_grid: &[f64],
) -> Result<ConvergenceTable, ConvergenceError> {
    if dt_grid.len() < MIN_GRID_POINTS {
        return Err(ConvergenceError::InsufficientGrid { need: MIN_GRID_POINTS, got: dt_grid.len() });
    }
    let expansion = quantity.expansion(params);
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut infeasible = Vec::new();
    for &dt in dt_grid {
        let p = params.with_dt(dt).map_err(|_| ConvergenceError::InvalidInterval(dt))?;
        match quantity.exact(&p) {
            Ok(exact) => {
                let approx = expansion.evaluate(dt);
                let error = (exact - approx).abs();
                let order = rows.last().map(|prev| (prev.error / error).ln() / (prev.dt / dt).ln());
                rows.push(ConvergenceRow { dt, exact, expansion: approx, error, order });
            }
            Err(e) => infeasible.push(InfeasiblePoint { dt, reason: e.to_string() }),
        }
    }
    Ok(ConvergenceTable {
        rows,
        infeasible,
        stated_order: expansion.stated_remainder.order(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, MarketParams};

    fn params(k: usize) -> ValidatedParams {
        validate(MarketParams::homogeneous(1.0, 1.0, 0.004, k, 1.0, 0.05)).unwrap()
    }

    #[test]
    fn monopoly_printed_coefficients() {
        let m = monopoly_expansions(&params(1));
        assert_eq!(m.beta.limit, 1.0);
        assert!((m.beta.half_order_coeff + 0.5f64.sqrt()).abs() < 1e-15);
        assert!((m.phi.half_order_coeff - 2f64.sqrt()).abs() < 1e-15);
        assert!((m.mu.half_order_coeff - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((m.d.limit - 10.0).abs() < 1e-12);
        assert_eq!(m.lambda.half_order_coeff, 0.0);
        assert_eq!(m.lambda.dt_coeff, -0.125);
        assert_eq!(m.lambda.stated_remainder, Remainder::Dt32);
    }

    #[test]
    fn nash_d_limit_four_traders() {
        let n = nash_expansions(&params(4));
        assert!((n.traders[0].d.limit - 2.0).abs() < 1e-12);
    }

    #[test]
    fn d_correction_vanishes_for_three_traders() {
        let n = nash_expansions(&params(3));
        assert!(n.traders[0].d.half_order_coeff.abs() < 1e-15);
        assert!(nash_expansions(&params(2)).traders[0].d.half_order_coeff < 0.0);
        assert!(nash_expansions(&params(4)).traders[0].d.half_order_coeff > 0.0);
    }

    #[test]
    fn nash_reduces_to_monopoly() {
        let p = validate(MarketParams::homogeneous(1.3, 0.7, 0.004, 1, 2.0, 0.1)).unwrap();
        let m = monopoly_expansions(&p);
        let n = nash_expansions(&p);
        let t = &n.traders[0];
        let pairs = [
            (&m.beta, &t.beta),
            (&m.beta, &n.beta_sigma),
            (&m.lambda, &n.lambda),
            (&m.phi, &t.phi),
            (&m.mu, &t.mu),
            (&m.a, &t.a),
            (&m.b, &t.b),
            (&m.c, &t.c),
            (&m.d, &t.d),
        ];
        for (a, b) in pairs {
            assert!((a.limit - b.limit).abs() < 1e-12, "{a:?} vs {b:?}");
            assert!((a.half_order_coeff - b.half_order_coeff).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn c_coefficient_two_traders() {
        let n = nash_expansions(&params(2));
        let expected = 3.0 / (2.0 * 2f64.powf(0.25) * 3f64.sqrt());
        assert!((n.traders[0].c.half_order_coeff - expected).abs() < 1e-15);
    }

    #[test]
    fn sign_structure() {
        for k in 1..=6 {
            let n = nash_expansions(&params(k));
            assert!(n.beta_sigma.half_order_coeff < 0.0);
            for t in &n.traders {
                assert!(t.phi.half_order_coeff > 0.0 && t.mu.half_order_coeff > 0.0);
            }
            if k == 1 {
                assert_eq!(n.lambda.half_order_coeff, 0.0);
            } else {
                assert!(n.lambda.half_order_coeff > 0.0);
            }
        }
    }

    #[test]
    fn relative_risk_aversion_flips_beta_correction() {
        let p = validate(MarketParams::heterogeneous(1.0, 1.0, 0.004, &[0.1, 4.0], 0.05)).unwrap();
        let n = nash_expansions(&p);
        let (b1, b2) = (n.traders[0].beta.half_order_coeff, n.traders[1].beta.half_order_coeff);
        assert!(b1 > b2);
        // positive iff 2 sqrt(gamma_i) < mean sqrt(gamma)
        let mean = (0.1f64.sqrt() + 2.0) / 2.0;
        assert_eq!(b1 > 0.0, 2.0 * 0.1f64.sqrt() < mean);
        assert!(b1 > 0.0 && b2 < 0.0);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(1e-2, 1e-6, 5);
        assert_eq!(g[0], 1e-2);
        assert_eq!(g[4], 1e-6);
        assert!((g[2] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn short_grid_rejected() {
        assert!(matches!(
            convergence_order(Quantity::Lambda, &params(1), &[1e-2, 1e-3]),
            Err(ConvergenceError::InsufficientGrid { .. })
        ));
    }
}
