//! Equilibrium solvers for the monopolist, Nash and taxed systems.
//!
//! The Nash system is solved by nesting: for a trial aggregate sensitivity
//! `beta_sigma`, each trader's individual sensitivity is the smaller root of
//! a quadratic (the best response `u_i`), and the aggregate is then the root
//! of `h(beta_sigma) = sum_i u_i(beta_sigma) - beta_sigma`, which is strictly
//! decreasing. Roots are bracketed and bisected, then polished with at most
//! three Newton steps that are discarded if they leave the bracket.

use crate::model::ValidatedParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower end of the aggregate-sensitivity search bracket.
pub const BRACKET_FLOOR: f64 = 1e-12;
/// Relative bracket width at which bisection stops.
pub const BISECTION_REL_WIDTH: f64 = 1e-14;
const MAX_EXPANSIONS: usize = 60;
const MAX_NEWTON: usize = 3;
/// Number of geometric tax steps used to follow the branch from `c = 0`.
pub const CONTINUATION_STEPS: usize = 32;
/// Tolerance on the per-trader system residual at a returned solution.
pub const SYSTEM_RESIDUAL_TOL: f64 = 1e-10;
/// Tolerance on the monopoly quartic residual, relative to `r^2`.
pub const QUARTIC_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("no sign change found in {what} (bracket [{lo}, {hi}]); the interval is likely infeasible")]
    NoRootInBracket { what: &'static str, lo: f64, hi: f64 },
    #[error("could not isolate the two real quartic roots: {0}")]
    RootsNotSeparated(String),
    #[error("negative discriminant {disc} in the best-response quadratic of trader {trader}")]
    NegativeDiscriminant { trader: usize, disc: f64 },
    #[error("solution violates {which}")]
    ConstraintViolated { which: String },
    #[error("tax continuation lost the branch at c = {at_tax}: {reason}")]
    ContinuationFailed { at_tax: f64, reason: String },
    #[error("{0}")]
    Precondition(String),
}

/// Solved pricing rule and strategy coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub betas: Vec<f64>,
    pub beta_sigma: f64,
    pub lambda: f64,
    pub phis: Vec<f64>,
    pub mus: Vec<f64>,
    pub tax: f64,
}

impl Equilibrium {
    pub fn k(&self) -> usize {
        self.betas.len()
    }

    /// `1 - lambda * beta_sigma`.
    pub fn eta(&self) -> f64 {
        1.0 - self.lambda * self.beta_sigma
    }
}

/// A root that was found and discarded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRoot {
    pub trader: Option<usize>,
    pub value: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SolveDiagnostics {
    /// Bisection plus Newton iterations on the outer root.
    pub iterations: usize,
    /// Final interval containing the root.
    pub bracket: (f64, f64),
    /// Sign-change interval found before bisection.
    pub search_bracket: (f64, f64),
    /// Per-trader residual of the individual equilibrium equation.
    pub residuals: Vec<f64>,
    pub rejected_roots: Vec<RejectedRoot>,
    /// Whether `h` decreased across ten interior samples of the search bracket.
    pub h_monotone: bool,
    pub continuation_steps: usize,
}

/// Bisection result.
#[derive(Debug, Clone, Copy)]
struct Bisected {
    root: f64,
    lo: f64,
    hi: f64,
    iterations: usize,
}

/// Bisects `f` on `[lo, hi]` given `f(lo)` and `f(hi)` of opposite sign.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_width: f64) -> Bisected {
    let mut f_lo = f(lo);
    let scale = hi.abs().max(1.0);
    let mut iterations = 0;
    while hi - lo > rel_width * scale && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        iterations += 1;
        if f_mid == 0.0 {
            return Bisected { root: mid, lo: mid, hi: mid, iterations };
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Bisected { root: 0.5 * (lo + hi), lo, hi, iterations }
}

/// At most `MAX_NEWTON` Newton steps from `x`, kept only while they stay in
/// `[lo, hi]` and do not increase `|f|`.
fn newton_polish(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    x: f64,
    lo: f64,
    hi: f64,
) -> (f64, usize) {
    let mut best = x;
    let mut f_best = f(x).abs();
    let mut steps = 0;
    for _ in 0..MAX_NEWTON {
        if f_best == 0.0 {
            break;
        }
        let d = df(best);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let cand = best - f(best) / d;
        steps += 1;
        if !(cand >= lo && cand <= hi) {
            break;
        }
        let f_cand = f(cand).abs();
        if f_cand > f_best {
            break;
        }
        best = cand;
        f_best = f_cand;
    }
    (best, steps)
}

/// Smaller root of `a x^2 + b x + c = 0` for `a, c > 0`, `b < 0`, using the
/// cancellation-free form `q = -(b + sign(b) sqrt(disc)) / 2`. Also returns
/// the larger root.
fn smaller_quadratic_root(a: f64, b: f64, c: f64) -> Result<(f64, f64), f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(disc);
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = (q / a, c / q);
    Ok(if r1 <= r2 { (r1, r2) } else { (r2, r1) })
}

// ---------------------------------------------------------------------------
// Monopolist
// ---------------------------------------------------------------------------

/// The monopolist's quartic in `beta`.
pub fn monopoly_quartic(beta: f64, params: &ValidatedParams) -> f64 {
    let r = params.ratio_sq();
    let dt = params.dt();
    let t = params.trader(0);
    let b2 = beta * beta;
    b2 * b2 * (1.0 - t.rho * dt) - (2.0 - t.rho * dt + beta * t.gamma * dt) * r * b2
        + r * r * (1.0 - beta * t.gamma * dt)
}

fn monopoly_quartic_derivative(beta: f64, params: &ValidatedParams) -> f64 {
    let r = params.ratio_sq();
    let dt = params.dt();
    let t = params.trader(0);
    4.0 * beta.powi(3) * (1.0 - t.rho * dt)
        - 2.0 * (2.0 - t.rho * dt) * r * beta
        - 3.0 * t.gamma * dt * r * beta * beta
        - r * r * t.gamma * dt
}

fn require_monopoly(params: &ValidatedParams) -> Result<(), SolveError> {
    if params.k() != 1 {
        return Err(SolveError::Precondition(format!(
            "monopoly solve needs exactly one trader, got {}",
            params.k()
        )));
    }
    if params.tax() != 0.0 {
        return Err(SolveError::Precondition("monopoly solve is untaxed".into()));
    }
    Ok(())
}

/// Quartic residual at `beta`, relative to `r^2`.
pub fn monopoly_quartic_residual(beta: f64, params: &ValidatedParams) -> f64 {
    let r = params.ratio_sq();
    (monopoly_quartic(beta, params) / (r * r)).abs()
}

/// The monopolist's signal sensitivity: the root of the quartic in `(0, sigma_K/sigma_S]`.
pub fn solve_monopoly_beta(params: &ValidatedParams) -> Result<f64, SolveError> {
    require_monopoly(params)?;
    let upper = params.ratio();
    if params.dt() == 0.0 {
        return Ok(upper);
    }
    let f = |b: f64| monopoly_quartic(b, params);
    // f(0) = r^2 > 0 and f(upper) = -2 r^(5/2) gamma dt < 0 for dt > 0.
    if !(f(0.0) > 0.0 && f(upper) < 0.0) {
        return Err(SolveError::NoRootInBracket { what: "monopoly quartic", lo: 0.0, hi: upper });
    }
    let bis = bisect(f, 0.0, upper, BISECTION_REL_WIDTH);
    let (beta, _) = newton_polish(f, |b| monopoly_quartic_derivative(b, params), bis.root, bis.lo, bis.hi);
    Ok(beta)
}

/// Both real roots of the monopoly quartic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuarticRoots {
    /// Root in `(0, sigma_K/sigma_S)`; the equilibrium sensitivity.
    pub admissible: f64,
    /// Root in `(sigma_K/sigma_S, inf)`, rejected because its `phi` is negative.
    pub inadmissible: RejectedRoot,
    pub inadmissible_phi: f64,
}

/// Mean-reversion fraction implied by a monopoly sensitivity.
fn monopoly_phi(beta: f64, params: &ValidatedParams) -> f64 {
    let lambda = price_impact(beta, params);
    1.0 - lambda * beta / (1.0 - lambda * beta)
}

pub fn monopoly_quartic_roots(params: &ValidatedParams) -> Result<QuarticRoots, SolveError> {
    require_monopoly(params)?;
    if params.dt() <= 0.0 {
        return Err(SolveError::RootsNotSeparated("dt = 0 gives a double root".into()));
    }
    let admissible = solve_monopoly_beta(params)?;
    let f = |b: f64| monopoly_quartic(b, params);
    let lo = params.ratio();
    if f(lo) >= 0.0 {
        return Err(SolveError::RootsNotSeparated("quartic not negative at sigma_K/sigma_S".into()));
    }
    let mut hi = 2.0 * lo;
    let mut n = 0;
    while f(hi) <= 0.0 {
        hi *= 2.0;
        n += 1;
        if n > MAX_EXPANSIONS {
            return Err(SolveError::RootsNotSeparated("no sign change above sigma_K/sigma_S".into()));
        }
    }
    let bis = bisect(f, lo, hi, BISECTION_REL_WIDTH);
    let (second, _) = newton_polish(f, |b| monopoly_quartic_derivative(b, params), bis.root, bis.lo, bis.hi);
    if !(second > admissible) {
        return Err(SolveError::RootsNotSeparated(format!("roots {admissible} and {second} not ordered")));
    }
    let phi = monopoly_phi(second, params);
    Ok(QuarticRoots {
        admissible,
        inadmissible: RejectedRoot {
            trader: Some(0),
            value: second,
            reason: format!("beta above sigma_K/sigma_S gives phi = {phi:.6e} < 0 (not admissible)"),
        },
        inadmissible_phi: phi,
    })
}

/// Monopolist equilibrium assembled from the quartic root.
pub fn solve_monopoly(params: &ValidatedParams) -> Result<(Equilibrium, SolveDiagnostics), SolveError> {
    require_monopoly(params)?;
    let beta = solve_monopoly_beta(params)?;
    let mut diag = SolveDiagnostics {
        bracket: (beta, beta),
        search_bracket: (0.0, params.ratio()),
        residuals: vec![monopoly_quartic(beta, params)],
        h_monotone: true,
        ..Default::default()
    };
    if params.dt() > 0.0 {
        if let Ok(roots) = monopoly_quartic_roots(params) {
            diag.rejected_roots.push(roots.inadmissible);
        }
    }
    let eq = assemble(vec![beta], beta, 0.0, params)?;
    Ok((eq, diag))
}

// ---------------------------------------------------------------------------
// Nash and taxed systems
// ---------------------------------------------------------------------------

/// `lambda = beta_sigma sigma_S^2 / (sigma_K^2 + beta_sigma^2 sigma_S^2)`.
pub fn price_impact(beta_sigma: f64, params: &ValidatedParams) -> f64 {
    let s2 = params.sigma_s() * params.sigma_s();
    let k2 = params.sigma_k() * params.sigma_k();
    beta_sigma * s2 / (k2 + beta_sigma * beta_sigma * s2)
}

/// Coefficients `(a, b, c0)` of trader `i`'s quadratic in `beta_i` at fixed
/// aggregate `bs` and tax `c`, plus their derivatives in `bs`.
struct BestResponseQuadratic {
    a: f64,
    b: f64,
    c0: f64,
    da: f64,
    db: f64,
}

fn best_response_quadratic(bs: f64, i: usize, params: &ValidatedParams, c: f64) -> BestResponseQuadratic {
    let r = params.ratio_sq();
    let dt = params.dt();
    let t = params.trader(i);
    let disc = 1.0 - t.rho * dt;
    let x = bs + 2.0 * c * (r + bs * bs);
    let dx = 1.0 + 4.0 * c * bs;
    BestResponseQuadratic {
        a: disc * x * x,
        b: -((x * (2.0 - t.rho * dt) + bs * bs * t.gamma * dt) * r) - r * r * t.gamma * dt,
        c0: r * r,
        da: 2.0 * disc * x * dx,
        db: -((dx * (2.0 - t.rho * dt) + 2.0 * bs * t.gamma * dt) * r),
    }
}

/// Residual of trader `i`'s equilibrium equation at `(bs, beta_i)` under tax `c`.
pub fn system_residual(bs: f64, beta_i: f64, i: usize, params: &ValidatedParams, c: f64) -> f64 {
    let q = best_response_quadratic(bs, i, params, c);
    (q.a * beta_i + q.b) * beta_i + q.c0
}

/// Best response of trader `i` with both roots; the first is the selected one.
fn best_response_roots(bs: f64, i: usize, params: &ValidatedParams, c: f64) -> Result<(f64, f64), SolveError> {
    let r = params.ratio_sq();
    if params.dt() == 0.0 {
        // (x beta_i - r)^2 = 0
        let x = bs + 2.0 * c * (r + bs * bs);
        let root = r / x;
        return Ok((root, root));
    }
    let q = best_response_quadratic(bs, i, params, c);
    smaller_quadratic_root(q.a, q.b, q.c0).map_err(|disc| SolveError::NegativeDiscriminant { trader: i, disc })
}

fn best_response(bs: f64, i: usize, params: &ValidatedParams, c: f64) -> Result<f64, SolveError> {
    best_response_roots(bs, i, params, c).map(|(lo, _)| lo)
}

/// `d u_i / d bs` by implicit differentiation of the quadratic.
fn best_response_slope(bs: f64, beta_i: f64, i: usize, params: &ValidatedParams, c: f64) -> f64 {
    let q = best_response_quadratic(bs, i, params, c);
    let g_beta = 2.0 * q.a * beta_i + q.b;
    let g_bs = q.da * beta_i * beta_i + q.db * beta_i;
    -g_bs / g_beta
}

/// Untaxed best response `u_i(beta_sigma)`: the smaller root of trader `i`'s
/// quadratic, which satisfies `0 < beta_i beta_sigma < (sigma_K/sigma_S)^2`.
pub fn nash_best_response_beta(beta_sigma: f64, trader: usize, params: &ValidatedParams) -> Result<f64, SolveError> {
    check_best_response_inputs(beta_sigma, trader, params)?;
    best_response(beta_sigma, trader, params, 0.0)
}

/// Best response under quadratic tax `c`.
pub fn taxed_best_response_beta(
    beta_sigma: f64,
    trader: usize,
    params: &ValidatedParams,
    c: f64,
) -> Result<f64, SolveError> {
    check_best_response_inputs(beta_sigma, trader, params)?;
    best_response(beta_sigma, trader, params, c)
}

fn check_best_response_inputs(beta_sigma: f64, trader: usize, params: &ValidatedParams) -> Result<(), SolveError> {
    if !(beta_sigma > 0.0) {
        return Err(SolveError::Precondition(format!("beta_sigma must be positive, got {beta_sigma}")));
    }
    if trader >= params.k() {
        return Err(SolveError::Precondition(format!("trader index {trader} out of range")));
    }
    Ok(())
}

/// `h(bs) = sum_i u_i(bs) - bs`.
pub fn aggregate_excess(bs: f64, params: &ValidatedParams, c: f64) -> Result<f64, SolveError> {
    let mut sum = 0.0;
    for i in 0..params.k() {
        sum += best_response(bs, i, params, c)?;
    }
    Ok(sum - bs)
}

fn aggregate_excess_slope(bs: f64, params: &ValidatedParams, c: f64) -> f64 {
    (0..params.k())
        .map(|i| match best_response(bs, i, params, c) {
            Ok(b) => best_response_slope(bs, b, i, params, c),
            Err(_) => f64::NAN,
        })
        .sum::<f64>()
        - 1.0
}

fn strictly_decreasing_on(h: impl Fn(f64) -> f64, lo: f64, hi: f64) -> bool {
    let samples: Vec<f64> = (1..=10).map(|j| h(lo + (hi - lo) * j as f64 / 11.0)).collect();
    samples.windows(2).all(|w| w[1] < w[0])
}

/// Assembles the pricing rule from solved sensitivities and checks every
/// equilibrium constraint.
fn assemble(betas: Vec<f64>, beta_sigma: f64, c: f64, params: &ValidatedParams) -> Result<Equilibrium, SolveError> {
    let r = params.ratio_sq();
    let limit = params.dt() == 0.0;
    if !(beta_sigma > 0.0) {
        return Err(SolveError::ConstraintViolated { which: format!("beta_sigma > 0 (got {beta_sigma})") });
    }
    let lambda = price_impact(beta_sigma, params);
    let eta = 1.0 - lambda * beta_sigma;
    if !(eta > 0.0) {
        return Err(SolveError::ConstraintViolated { which: format!("lambda * beta_sigma < 1 (got {})", 1.0 - eta) });
    }
    let x = beta_sigma + 2.0 * c * (r + beta_sigma * beta_sigma);
    let mut phis = Vec::with_capacity(betas.len());
    for (i, &b) in betas.iter().enumerate() {
        if !(b > 0.0) {
            return Err(SolveError::ConstraintViolated { which: format!("beta_{i} > 0 (got {b})") });
        }
        // beta_i beta_sigma <= r, or beta_i <= r / x under tax; equal to r/x at dt = 0.
        let cap = r / x;
        if b > cap * (1.0 + 4.0 * f64::EPSILON) {
            return Err(SolveError::ConstraintViolated {
                which: format!("beta_{i} <= {cap} (got {b})"),
            });
        }
        let phi = if limit { 0.0 } else { 1.0 - (lambda + 2.0 * c) * b / eta };
        if !limit && !(phi > 0.0 && phi <= 1.0) {
            return Err(SolveError::ConstraintViolated { which: format!("phi_{i} in (0, 1] (got {phi})") });
        }
        phis.push(phi);
    }
    let mus = phis.iter().map(|p| lambda * p).collect();
    Ok(Equilibrium {
        betas,
        beta_sigma,
        lambda,
        phis,
        mus,
        tax: c,
    })
}

/// Closed-form high-frequency limit of the untaxed system.
fn nash_limit(params: &ValidatedParams) -> Result<(Equilibrium, SolveDiagnostics), SolveError> {
    let k = params.k() as f64;
    let ratio = params.ratio();
    let beta_i = ratio / k.sqrt();
    let beta_sigma = k.sqrt() * ratio;
    let lambda = k.sqrt() / (1.0 + k) / ratio;
    let n = params.k();
    let eq = Equilibrium {
        betas: vec![beta_i; n],
        beta_sigma,
        lambda,
        phis: vec![0.0; n],
        mus: vec![0.0; n],
        tax: 0.0,
    };
    let diag = SolveDiagnostics {
        bracket: (beta_sigma, beta_sigma),
        search_bracket: (beta_sigma, beta_sigma),
        residuals: vec![0.0; n],
        h_monotone: true,
        ..Default::default()
    };
    Ok((eq, diag))
}

/// Outer root on a bracket with `h(lo) > 0 > h(hi)`.
fn solve_on_bracket(
    params: &ValidatedParams,
    c: f64,
    lo: f64,
    hi: f64,
    diag: &mut SolveDiagnostics,
) -> Result<Equilibrium, SolveError> {
    let h = |bs: f64| aggregate_excess(bs, params, c).unwrap_or(f64::NAN);
    diag.search_bracket = (lo, hi);
    diag.h_monotone = strictly_decreasing_on(h, lo, hi);
    let bis = bisect(h, lo, hi, BISECTION_REL_WIDTH);
    let (bs, newton) = newton_polish(h, |x| aggregate_excess_slope(x, params, c), bis.root, bis.lo, bis.hi);
    diag.iterations += bis.iterations + newton;
    diag.bracket = (bis.lo, bis.hi);

    let mut betas = Vec::with_capacity(params.k());
    diag.residuals.clear();
    diag.rejected_roots.clear();
    for i in 0..params.k() {
        let (small, large) = best_response_roots(bs, i, params, c)?;
        betas.push(small);
        diag.residuals.push(system_residual(bs, small, i, params, c));
        if params.dt() > 0.0 {
            diag.rejected_roots.push(RejectedRoot {
                trader: Some(i),
                value: large,
                reason: "larger root of the best-response quadratic violates the sensitivity cap".into(),
            });
        }
    }
    let scale = params.ratio_sq().powi(2).max(1.0);
    if let Some((i, res)) = diag
        .residuals
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.abs() <= SYSTEM_RESIDUAL_TOL * scale))
    {
        return Err(SolveError::ConstraintViolated { which: format!("residual of trader {i} equation is {res}") });
    }
    assemble(betas, bs, c, params)
}

/// Initial bracket `[floor, sqrt(k) sigma_K/sigma_S + 1]`, expanded upward.
fn global_bracket(params: &ValidatedParams, c: f64) -> Result<(f64, f64), SolveError> {
    let lo = BRACKET_FLOOR;
    let h_lo = aggregate_excess(lo, params, c)?;
    let mut hi = (params.k() as f64).sqrt() * params.ratio() + 1.0;
    if !(h_lo > 0.0) {
        return Err(SolveError::NoRootInBracket { what: "aggregate excess h", lo, hi });
    }
    let mut n = 0;
    while aggregate_excess(hi, params, c)? > 0.0 {
        hi *= 2.0;
        n += 1;
        if n > MAX_EXPANSIONS {
            return Err(SolveError::NoRootInBracket { what: "aggregate excess h", lo, hi });
        }
    }
    Ok((lo, hi))
}

/// Untaxed `k`-trader Nash equilibrium.
pub fn solve_nash(params: &ValidatedParams) -> Result<(Equilibrium, SolveDiagnostics), SolveError> {
    if params.tax() != 0.0 {
        return Err(SolveError::Precondition("solve_nash is untaxed; use solve_taxed".into()));
    }
    if params.dt() == 0.0 {
        return nash_limit(params);
    }
    let (lo, hi) = global_bracket(params, 0.0)?;
    let mut diag = SolveDiagnostics::default();
    let eq = solve_on_bracket(params, 0.0, lo, hi, &mut diag)?;
    Ok((eq, diag))
}

/// Bracket centered on `center` with a sign change of `h`, widened geometrically.
fn local_bracket(params: &ValidatedParams, c: f64, center: f64) -> Result<(f64, f64), SolveError> {
    let h = |bs: f64| aggregate_excess(bs, params, c);
    let mut w = 1e-3 * center;
    for _ in 0..MAX_EXPANSIONS {
        let lo = (center - w).max(BRACKET_FLOOR);
        let hi = center + w;
        let (h_lo, h_hi) = (h(lo)?, h(hi)?);
        if h_lo > 0.0 && h_hi < 0.0 {
            return Ok((lo, hi));
        }
        if h_lo <= 0.0 && lo == BRACKET_FLOOR {
            break;
        }
        w *= 2.0;
    }
    Err(SolveError::ContinuationFailed {
        at_tax: c,
        reason: format!("no sign change of h around beta_sigma = {center}"),
    })
}

/// Equilibrium under quadratic transaction tax `params.tax()`, reached by
/// geometric continuation in the tax from the untaxed solution.
pub fn solve_taxed(params: &ValidatedParams) -> Result<(Equilibrium, SolveDiagnostics), SolveError> {
    let target = params.tax();
    let untaxed = params.with_tax(0.0).map_err(|e| SolveError::Precondition(e.to_string()))?;
    let (mut eq, mut diag) = if untaxed.dt() == 0.0 {
        // The untaxed limit is closed-form; keep the bracket logic for c > 0.
        nash_limit(&untaxed)?
    } else {
        solve_nash(&untaxed)?
    };
    if target == 0.0 {
        return Ok((eq, diag));
    }
    let mut steps = 0;
    for j in 0..CONTINUATION_STEPS {
        let c = target * 0.5f64.powi((CONTINUATION_STEPS - 1 - j) as i32);
        let (lo, hi) = local_bracket(params, c, eq.beta_sigma)?;
        let mut step_diag = SolveDiagnostics::default();
        let next = solve_on_bracket(params, c, lo, hi, &mut step_diag)?;
        if !step_diag.h_monotone {
            return Err(SolveError::ContinuationFailed {
                at_tax: c,
                reason: "h is not monotone on the local bracket (possible fold)".into(),
            });
        }
        step_diag.iterations += diag.iterations;
        eq = next;
        diag = step_diag;
        steps += 1;
    }
    diag.continuation_steps = steps;
    Ok((eq, diag))
}

/// Dispatches on the number of traders and the tax.
pub fn solve(params: &ValidatedParams) -> Result<(Equilibrium, SolveDiagnostics), SolveError> {
    if params.tax() > 0.0 {
        solve_taxed(params)
    } else {
        solve_nash(params)
    }
}
