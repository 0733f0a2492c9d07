//! Market parameters and their validation.
//!
//! Every other module consumes a [`ValidatedParams`], which can only be
//! obtained through [`validate`]. The squared volatility ratio
//! `r = (sigma_K / sigma_S)^2` is computed once here and shared.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Per-trader preferences and starting position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraderParams {
    /// Inventory-cost rate per unit time.
    pub gamma: f64,
    /// Discount rate per unit time.
    pub rho: f64,
    /// Starting inventory in shares.
    #[serde(default)]
    pub initial_inventory: f64,
}

impl TraderParams {
    pub fn new(gamma: f64, rho: f64) -> Self {
        Self {
            gamma,
            rho,
            initial_inventory: 0.0,
        }
    }
}

/// Exogenous model constants, as read from a JSON config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Volatility of fundamental-value increments per unit time.
    #[serde(rename = "sigma_S")]
    pub sigma_s: f64,
    /// Noise-trade volatility per unit time.
    #[serde(rename = "sigma_K")]
    pub sigma_k: f64,
    /// Trading interval.
    pub dt: f64,
    /// Quadratic transaction-tax coefficient.
    #[serde(default)]
    pub tax: f64,
    pub traders: Vec<TraderParams>,
}

impl MarketParams {
    /// `k` identical traders with zero starting inventory and no tax.
    pub fn homogeneous(sigma_s: f64, sigma_k: f64, dt: f64, k: usize, gamma: f64, rho: f64) -> Self {
        Self {
            sigma_s,
            sigma_k,
            dt,
            tax: 0.0,
            traders: vec![TraderParams::new(gamma, rho); k],
        }
    }

    /// Traders with individual inventory costs and a common discount rate.
    pub fn heterogeneous(sigma_s: f64, sigma_k: f64, dt: f64, gammas: &[f64], rho: f64) -> Self {
        Self {
            sigma_s,
            sigma_k,
            dt,
            tax: 0.0,
            traders: gammas.iter().map(|&g| TraderParams::new(g, rho)).collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed parameter document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationErrors),
}

/// A single violated standing assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveVolatility { which: &'static str, value: f64 },
    /// `dt` negative or not finite. `dt = 0` is the high-frequency limit and is allowed.
    InvalidInterval { value: f64 },
    /// `rho * dt` outside `(0, 1)` (or `rho <= 0` when `dt = 0`).
    DiscountOutOfRange { trader: usize, rho_dt: f64 },
    NonPositiveGamma { trader: usize, value: f64 },
    NegativeTax { value: f64 },
    NonFinite { field: String },
    EmptyTraderList,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveVolatility { which, value } => {
                write!(f, "{which} must be positive, got {value}")
            }
            Violation::InvalidInterval { value } => {
                write!(f, "dt must be finite and nonnegative, got {value}")
            }
            Violation::DiscountOutOfRange { trader, rho_dt } => {
                write!(f, "trader {trader}: rho*dt = {rho_dt} is outside (0, 1)")
            }
            Violation::NonPositiveGamma { trader, value } => {
                write!(f, "trader {trader}: gamma must be positive, got {value}")
            }
            Violation::NegativeTax { value } => write!(f, "tax must be nonnegative, got {value}"),
            Violation::NonFinite { field } => write!(f, "{field} is not finite"),
            Violation::EmptyTraderList => write!(f, "at least one trader is required"),
        }
    }
}

/// Every violation found in one pass over the parameters.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid parameters: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationErrors(pub Vec<Violation>);

/// Parameters that satisfy every standing assumption.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedParams {
    inner: MarketParams,
    #[serde(skip)]
    ratio_sq: f64,
}

pub fn validate(params: MarketParams) -> Result<ValidatedParams, ValidationErrors> {
    let mut errs = Vec::new();
    for (name, v) in [("sigma_S", params.sigma_s), ("sigma_K", params.sigma_k)] {
        if !v.is_finite() {
            errs.push(Violation::NonFinite { field: name.into() });
        } else if v <= 0.0 {
            errs.push(Violation::NonPositiveVolatility { which: name, value: v });
        }
    }
    if !(params.dt.is_finite() && params.dt >= 0.0) {
        errs.push(Violation::InvalidInterval { value: params.dt });
    }
    if !params.tax.is_finite() {
        errs.push(Violation::NonFinite { field: "tax".into() });
    } else if params.tax < 0.0 {
        errs.push(Violation::NegativeTax { value: params.tax });
    }
    if params.traders.is_empty() {
        errs.push(Violation::EmptyTraderList);
    }
    for (i, t) in params.traders.iter().enumerate() {
        if !t.gamma.is_finite() {
            errs.push(Violation::NonFinite { field: format!("traders[{i}].gamma") });
        } else if t.gamma <= 0.0 {
            errs.push(Violation::NonPositiveGamma { trader: i, value: t.gamma });
        }
        if !t.initial_inventory.is_finite() {
            errs.push(Violation::NonFinite { field: format!("traders[{i}].initial_inventory") });
        }
        if !t.rho.is_finite() {
            errs.push(Violation::NonFinite { field: format!("traders[{i}].rho") });
        } else if params.dt.is_finite() {
            let rho_dt = t.rho * params.dt;
            if t.rho <= 0.0 || rho_dt >= 1.0 || (params.dt > 0.0 && rho_dt <= 0.0) {
                errs.push(Violation::DiscountOutOfRange { trader: i, rho_dt });
            }
        }
    }
    if !errs.is_empty() {
        return Err(ValidationErrors(errs));
    }
    let ratio = params.sigma_k / params.sigma_s;
    Ok(ValidatedParams {
        ratio_sq: ratio * ratio,
        inner: params,
    })
}

impl ValidatedParams {
    pub fn params(&self) -> &MarketParams {
        &self.inner
    }

    pub fn into_inner(self) -> MarketParams {
        self.inner
    }

    pub fn sigma_s(&self) -> f64 {
        self.inner.sigma_s
    }

    pub fn sigma_k(&self) -> f64 {
        self.inner.sigma_k
    }

    pub fn dt(&self) -> f64 {
        self.inner.dt
    }

    pub fn tax(&self) -> f64 {
        self.inner.tax
    }

    /// Number of strategic traders.
    pub fn k(&self) -> usize {
        self.inner.traders.len()
    }

    pub fn traders(&self) -> &[TraderParams] {
        &self.inner.traders
    }

    pub fn trader(&self, i: usize) -> &TraderParams {
        &self.inner.traders[i]
    }

    /// `(sigma_K / sigma_S)^2`.
    pub fn ratio_sq(&self) -> f64 {
        self.ratio_sq
    }

    /// `sigma_K / sigma_S`.
    pub fn ratio(&self) -> f64 {
        self.inner.sigma_k / self.inner.sigma_s
    }

    /// One-period discount factor `1 - rho_i dt`.
    pub fn discount(&self, i: usize) -> f64 {
        1.0 - self.inner.traders[i].rho * self.inner.dt
    }

    /// Same market with a different interval, re-validated.
    pub fn with_dt(&self, dt: f64) -> Result<Self, ValidationErrors> {
        let mut p = self.inner.clone();
        p.dt = dt;
        validate(p)
    }

    /// Same market with a different tax, re-validated.
    pub fn with_tax(&self, tax: f64) -> Result<Self, ValidationErrors> {
        let mut p = self.inner.clone();
        p.tax = tax;
        validate(p)
    }
}
