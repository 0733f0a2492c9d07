//! Quadratic value function of each trader and the dynamic programming
//! checks it must satisfy.
//!
//! For trader `i` facing the equilibrium pricing rule, with `M` the dealers'
//! inventory prediction, `dS` the observed value increment and `Z = L - M`
//! the deviation of actual from predicted inventory,
//!
//! ```text
//! v(M, dS, Z) = -A/2 M^2 + B/2 dS^2 - C M dS + D - E/2 Z^2 - F M Z + G dS Z
//! ```
//!
//! and the optimal deviation control is `dZ = -zeta Z`.

use crate::model::ValidatedParams;
use crate::simulator::stationary_second_moment;
use crate::solver::Equilibrium;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `F + gamma dt - lambda phi / (1 - phi)`.
pub const LEMMA_IDENTITY_TOL: f64 = 1e-12;
/// Tolerance on the scaled DPE residual `|lhs - rhs| / (1 + |v|)`.
pub const DPE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("(1 - rho dt)(1 - phi)^2 = {0} is not below 1; A is undefined")]
    DegenerateDenominator(f64),
    #[error("{0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueCoefficients {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub zeta: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub eta: f64,
}

/// Positive root of `E^2 + E (gamma dt + 2 lambda rho dt) - 2 lambda gamma dt (1 - rho dt) = 0`.
fn deviation_curvature(lambda: f64, gamma_dt: f64, rho_dt: f64) -> f64 {
    let b = gamma_dt + 2.0 * lambda * rho_dt;
    let c = 2.0 * lambda * gamma_dt * (1.0 - rho_dt);
    // (-b + sqrt(b^2 + 4c)) / 2 without cancellation
    2.0 * c / (b + (b * b + 4.0 * c).sqrt())
}

pub fn value_coefficients(
    eq: &Equilibrium,
    trader: usize,
    params: &ValidatedParams,
) -> Result<ValueCoefficients, ValueError> {
    if trader >= eq.k() || eq.k() != params.k() {
        return Err(ValueError::Precondition(format!("trader {trader} not in a {}-trader equilibrium", eq.k())));
    }
    if eq.tax != 0.0 {
        return Err(ValueError::Precondition("value function is only available for untaxed equilibria".into()));
    }
    let dt = params.dt();
    if !(dt > 0.0) {
        return Err(ValueError::Precondition("value function needs dt > 0".into()));
    }
    let t = params.trader(trader);
    let beta = eq.betas[trader];
    let phi = eq.phis[trader];
    let lambda = eq.lambda;
    if !(phi > 0.0 && phi < 1.0) {
        return Err(ValueError::Precondition(format!("phi = {phi} is outside (0, 1)")));
    }
    let disc = 1.0 - t.rho * dt;
    let gdt = t.gamma * dt;
    let eta = eq.eta();

    let carry = disc * (1.0 - phi).powi(2);
    if carry >= 1.0 {
        return Err(ValueError::DegenerateDenominator(carry));
    }
    let a = carry * gdt / (1.0 - carry);
    let b = disc * beta * (2.0 * eta - beta * (a + gdt));
    let c = disc * (beta * (1.0 - phi) * (a + gdt) + phi * eta);
    let d = disc * b * params.sigma_s().powi(2) / (2.0 * t.rho);

    let e = deviation_curvature(lambda, gdt, t.rho * dt);
    let zeta = (e + gdt) / (e + gdt + 2.0 * lambda);
    let f = disc * (lambda * phi * zeta + (1.0 - zeta) * (1.0 - phi) * gdt)
        / (phi + (1.0 - phi) * (zeta * disc + t.rho * dt));
    let g = disc * (-beta * (1.0 - zeta) * (f + gdt) + zeta * (lambda * beta - eta));
    Ok(ValueCoefficients { a, b, c, d, e, zeta, f, g, eta })
}

/// Value of the state `(M, dS, Z)`.
pub fn evaluate_value(v: &ValueCoefficients, m: f64, ds: f64, z: f64) -> f64 {
    -0.5 * v.a * m * m + 0.5 * v.b * ds * ds - v.c * m * ds + v.d - 0.5 * v.e * z * z - v.f * m * z + v.g * ds * z
}

/// One-period reward of the reduced problem:
/// `(eta dS - lambda dZ)(beta dS - phi M + dZ) - gamma dt / 2 (beta dS + (1 - phi) M + Z + dZ)^2`.
pub fn period_reward(eq: &Equilibrium, trader: usize, params: &ValidatedParams, m: f64, ds: f64, z: f64, dz: f64) -> f64 {
    let beta = eq.betas[trader];
    let phi = eq.phis[trader];
    let gdt = params.trader(trader).gamma * params.dt();
    let inventory = beta * ds + (1.0 - phi) * m + z + dz;
    (eq.eta() * ds - eq.lambda * dz) * (beta * ds - phi * m + dz) - 0.5 * gdt * inventory * inventory
}

/// Right-hand side of the DPE for a given control `dz`: the reward plus the
/// expected continuation value over the next Gaussian increment.
#[allow(clippy::too_many_arguments)]
pub fn dpe_rhs(
    v: &ValueCoefficients,
    eq: &Equilibrium,
    trader: usize,
    params: &ValidatedParams,
    m: f64,
    ds: f64,
    z: f64,
    dz: f64,
) -> f64 {
    let beta = eq.betas[trader];
    let phi = eq.phis[trader];
    let next_m = beta * ds + (1.0 - phi) * m;
    let next_z = z + dz;
    // Odd powers of the next increment integrate to zero.
    let continuation = -0.5 * v.a * next_m * next_m + 0.5 * v.b * params.sigma_s().powi(2) * params.dt() + v.d
        - 0.5 * v.e * next_z * next_z
        - v.f * next_m * next_z;
    period_reward(eq, trader, params, m, ds, z, dz) + continuation
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpeResidual {
    pub max_abs: f64,
    /// `max |lhs - rhs| / (1 + |v|)`.
    pub max_scaled: f64,
    pub points: usize,
}

impl DpeResidual {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_scaled <= tol
    }
}

/// DPE residual `v / (1 - rho dt) - rhs(dZ = -zeta Z)` over `grid` of `(M, dS, Z)`.
pub fn dpe_residual(
    v: &ValueCoefficients,
    eq: &Equilibrium,
    trader: usize,
    params: &ValidatedParams,
    grid: &[(f64, f64, f64)],
) -> DpeResidual {
    let disc = params.discount(trader);
    let mut out = DpeResidual { max_abs: 0.0, max_scaled: 0.0, points: grid.len() };
    for &(m, ds, z) in grid {
        let value = evaluate_value(v, m, ds, z);
        let lhs = value / disc;
        let rhs = dpe_rhs(v, eq, trader, params, m, ds, z, -v.zeta * z);
        let diff = (lhs - rhs).abs();
        out.max_abs = out.max_abs.max(diff);
        out.max_scaled = out.max_scaled.max(diff / (1.0 + value.abs()));
    }
    out
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| a + (b - a) * j as f64 / (n - 1) as f64)
}

/// 5x5x5 grid: `M` within three stationary standard deviations, `dS` within
/// three standard deviations of one increment, and `Z` in `[-1, 1]`.
pub fn default_dpe_grid(eq: &Equilibrium, trader: usize, params: &ValidatedParams) -> Vec<(f64, f64, f64)> {
    let sd_m = stationary_second_moment(eq.betas[trader], eq.phis[trader], params.sigma_s(), params.dt()).sqrt();
    let sd_s = params.sigma_s() * params.dt().sqrt();
    let mut grid = Vec::with_capacity(125);
    for m in linspace(-3.0 * sd_m, 3.0 * sd_m, 5) {
        for ds in linspace(-3.0 * sd_s, 3.0 * sd_s, 5) {
            for z in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                grid.push((m, ds, z));
            }
        }
    }
    grid
}

/// `|F + gamma dt - lambda phi / (1 - phi)|`.
pub fn lemma_identity_residual(v: &ValueCoefficients, eq: &Equilibrium, trader: usize, params: &ValidatedParams) -> f64 {
    let phi = eq.phis[trader];
    (v.f + params.trader(trader).gamma * params.dt() - eq.lambda * phi / (1.0 - phi)).abs()
}

/// Residuals of the two defining equations of `E` and `zeta`.
pub fn curvature_residuals(v: &ValueCoefficients, eq: &Equilibrium, trader: usize, params: &ValidatedParams) -> (f64, f64) {
    let gdt = params.trader(trader).gamma * params.dt();
    let disc = params.discount(trader);
    (
        (v.e - 2.0 * eq.lambda * v.zeta * disc).abs(),
        (v.zeta - (v.e + gdt) / (v.e + gdt + 2.0 * eq.lambda)).abs(),
    )
}

/// Names of coefficients whose sign differs from the expected one
/// (`A, E, zeta, F >= 0`, `G <= 0`, `eta` in `(0, 1]`).
pub fn sign_violations(v: &ValueCoefficients) -> Vec<&'static str> {
    let mut out = Vec::new();
    if v.a < 0.0 {
        out.push("A");
    }
    if v.e <= 0.0 {
        out.push("E");
    }
    if !(v.zeta > 0.0 && v.zeta < 1.0) {
        out.push("zeta");
    }
    if v.f < 0.0 {
        out.push("F");
    }
    if v.g > 0.0 {
        out.push("G");
    }
    if !(v.eta > 0.0 && v.eta <= 1.0) {
        out.push("eta");
    }
    out
}

/// Deviation path `Z_n = Z_{n-1} - zeta Z_{n-1}` for `n = 0..=steps`.
pub fn deviation_path(z0: f64, zeta: f64, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut z = z0;
    out.push(z);
    for _ in 0..steps {
        z -= zeta * z;
        out.push(z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, MarketParams};
    use crate::solver::solve_nash;

    fn solved(k: usize, dt: f64) -> (ValidatedParams, Equilibrium) {
        let p = validate(MarketParams::homogeneous(1.0, 1.0, dt, k, 1.0, 0.05)).unwrap();
        let (eq, _) = solve_nash(&p).unwrap();
        (p, eq)
    }

    #[test]
    fn monopoly_coefficients_match_oracle() {
        let (p, eq) = solved(1, 0.004);
        let v = value_coefficients(&eq, 0, &p).unwrap();
        // 40-digit evaluation of the same closed forms at the 40-digit root
        let expected = [
            (v.a, 0.020_415_457_574_041_786),
            (v.b, 0.976_479_009_922_532),
            (v.c, 0.065_990_706_629_821_91),
            (v.d, 9.762_837_141_205_475),
            (v.e, 0.061_142_655_903_503_72),
            (v.zeta, 0.061_215_941_648_601_72),
            (v.f, 0.042_691_618_462_217_82),
            (v.g, -0.044_642_380_006_226_08),
            (v.eta, 0.522_325_655_134_139_9),
        ];
        for (got, want) in expected {
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
        // D close to 10 - (sqrt 2 / 8)(1/0.05) sqrt(dt), within O(dt) scaled by 1/rho
        let band = 10.0 - 2f64.sqrt() / 8.0 / 0.05 * 0.004f64.sqrt();
        assert!((v.d - band).abs() < 0.004 / 0.05);
    }

    #[test]
    fn defining_equations_hold() {
        for k in [1, 2, 4] {
            let (p, eq) = solved(k, 0.004);
            for i in 0..k {
                let v = value_coefficients(&eq, i, &p).unwrap();
                let (r1, r2) = curvature_residuals(&v, &eq, i, &p);
                assert!(r1 < 1e-12 && r2 < 1e-12);
                assert!(lemma_identity_residual(&v, &eq, i, &p) < LEMMA_IDENTITY_TOL);
                assert!(sign_violations(&v).is_empty());
            }
        }
    }

    #[test]
    fn value_at_origin_and_axis() {
        let (p, eq) = solved(2, 0.004);
        let v = value_coefficients(&eq, 0, &p).unwrap();
        assert_eq!(evaluate_value(&v, 0.0, 0.0, 0.0), v.d);
        assert!((evaluate_value(&v, 1.5, 0.0, 0.0) - (v.d - 0.5 * v.a * 2.25)).abs() < 1e-15);
    }

    #[test]
    fn origin_isolates_constant_equation() {
        let (p, eq) = solved(1, 0.004);
        let v = value_coefficients(&eq, 0, &p).unwrap();
        let lhs = v.d / p.discount(0);
        let rhs = dpe_rhs(&v, &eq, 0, &p, 0.0, 0.0, 0.0, 0.0);
        assert!((rhs - (0.5 * v.b * p.dt() + v.d)).abs() < 1e-15);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    /// Coefficient matching of both sides of the DPE, an algebraic route
    /// independent of the pointwise evaluation.
    #[test]
    fn dpe_coefficients_match() {
        let (p, eq) = solved(2, 0.004);
        let v = value_coefficients(&eq, 1, &p).unwrap();
        let (beta, phi, lam, eta) = (eq.betas[1], eq.phis[1], eq.lambda, eq.eta());
        let gdt = p.dt();
        let d = p.discount(1);
        let z = v.zeta;
        let pairs = [
            (v.a / d, (v.a + gdt) * (1.0 - phi).powi(2)),
            (v.b / d, 2.0 * beta * eta - beta * beta * (v.a + gdt)),
            (v.c / d, beta * (1.0 - phi) * (v.a + gdt) + phi * eta),
            (v.d / d, 0.5 * v.b * p.dt() + v.d),
            (v.e / d, (v.e + gdt) * (1.0 - z).powi(2) + 2.0 * lam * z * z),
            (v.f / d, (1.0 - z) * (1.0 - phi) * (v.f + gdt) + z * lam * phi),
            (v.g / d, -beta * (1.0 - z) * (v.f + gdt) + z * (lam * beta - eta)),
        ];
        for (lhs, rhs) in pairs {
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn dpe_residual_on_default_grid() {
        for k in [1, 2, 4] {
            let (p, eq) = solved(k, 0.004);
            let v = value_coefficients(&eq, 0, &p).unwrap();
            let grid = default_dpe_grid(&eq, 0, &p);
            assert_eq!(grid.len(), 125);
            let res = dpe_residual(&v, &eq, 0, &p, &grid);
            assert!(res.passes(DPE_TOL), "{res:?}");
        }
        let (p, eq) = solved(2, 0.004);
        let v = value_coefficients(&eq, 0, &p).unwrap();
        assert!(dpe_residual(&v, &eq, 0, &p, &[(1.0, 0.02, 0.5)]).max_abs < 1e-9);
    }

    #[test]
    fn numeric_argmax_is_minus_zeta_z() {
        let (p, eq) = solved(2, 0.004);
        let v = value_coefficients(&eq, 0, &p).unwrap();
        let (m, ds, z) = (0.3, -0.05, 0.8);
        let center = -v.zeta * z;
        let step = 1e-4;
        let best = (-200..=200)
            .map(|j| center + step * j as f64)
            .map(|dz| (dz, dpe_rhs(&v, &eq, 0, &p, m, ds, z, dz)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((best.0 - center).abs() <= step);
    }

    #[test]
    fn deviation_contracts_geometrically() {
        let path = deviation_path(2.0, 0.25, 10);
        for (n, z) in path.iter().enumerate() {
            assert!((z - 2.0 * 0.75f64.powi(n as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_taxed_and_limit() {
        let (p, eq) = solved(1, 0.0);
        assert!(value_coefficients(&eq, 0, &p).is_err());
        let (p, mut eq) = solved(1, 0.004);
        eq.tax = 0.1;
        assert!(value_coefficients(&eq, 0, &p).is_err());
    }
}
