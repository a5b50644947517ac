//! Model constants shared by the market simulation and both agents.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Terminal and running inventory-penalty coefficients of one agent.
///
/// The terminal penalty is `(beta0 + beta1 * V_T) q^2` and the running
/// penalty is `(rho0 + rho1 * V_t) q^2`, where `V` is the agent's filter
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskAversion {
    pub beta0: f64,
    pub beta1: f64,
    pub rho0: f64,
    pub rho1: f64,
}

impl Default for RiskAversion {
    fn default() -> Self {
        RiskAversion {
            beta0: 0.1,
            beta1: 1e-3,
            rho0: 1e-3,
            rho1: 1e-5,
        }
    }
}

impl RiskAversion {
    pub fn terminal(&self, variance: f64) -> f64 {
        self.beta0 + self.beta1 * variance
    }

    pub fn running(&self, variance: f64) -> f64 {
        self.rho0 + self.rho1 * variance
    }
}

/// Every scalar constant of the model. Defaults are the reference
/// calibration used in the numerical experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Permanent impact of the broker's lit-market rate on the price drift.
    pub perm_impact: f64,
    /// Temporary impact paid by the broker in the lit market.
    pub cost_broker: f64,
    /// Fee the broker charges the informed trader per unit rate.
    pub cost_informed: f64,
    /// Fee the broker charges uninformed clients per unit rate.
    pub cost_uninformed: f64,
    pub sigma_s: f64,
    pub s0: f64,
    pub kappa_alpha: f64,
    pub sigma_alpha: f64,
    pub alpha0: f64,
    /// Correlation between the price and signal Brownian motions.
    pub rho: f64,
    pub kappa_u: f64,
    pub sigma_u: f64,
    /// Mean reversion the trader assumes for the broker's rate.
    pub theta_b: f64,
    /// Volatility the trader assumes for the broker's rate.
    pub sigma_b: f64,
    pub risk_informed: RiskAversion,
    pub risk_broker: RiskAversion,
    /// Scale the broker applies to the trader's reaction to her own flow.
    pub c_belief: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            perm_impact: 1e-3,
            cost_broker: 2.1e-3,
            cost_informed: 2e-3,
            cost_uninformed: 2e-3,
            sigma_s: 1.0,
            s0: 100.0,
            kappa_alpha: 5.0,
            sigma_alpha: 1.0,
            alpha0: 0.0,
            rho: 0.0,
            kappa_u: 15.0,
            sigma_u: 100.0,
            theta_b: 10.0,
            sigma_b: 60.0,
            risk_informed: RiskAversion::default(),
            risk_broker: RiskAversion::default(),
            c_belief: 1.0,
        }
    }
}

fn finite(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    finite(field, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    finite(field, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be >= 0, got {v}")))
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        non_negative("perm_impact", self.perm_impact)?;
        positive("cost_broker", self.cost_broker)?;
        positive("cost_informed", self.cost_informed)?;
        positive("cost_uninformed", self.cost_uninformed)?;
        positive("sigma_s", self.sigma_s)?;
        finite("s0", self.s0)?;
        non_negative("kappa_alpha", self.kappa_alpha)?;
        non_negative("sigma_alpha", self.sigma_alpha)?;
        finite("alpha0", self.alpha0)?;
        finite("rho", self.rho)?;
        if self.rho.abs() > 1.0 {
            return Err(Error::invalid(
                "rho",
                format!("must lie in [-1, 1], got {}", self.rho),
            ));
        }
        non_negative("kappa_u", self.kappa_u)?;
        non_negative("sigma_u", self.sigma_u)?;
        positive("theta_b", self.theta_b)?;
        non_negative("sigma_b", self.sigma_b)?;
        let (ri, rb) = (&self.risk_informed, &self.risk_broker);
        for (field, v) in [
            ("risk_informed.beta0", ri.beta0),
            ("risk_informed.beta1", ri.beta1),
            ("risk_informed.rho0", ri.rho0),
            ("risk_informed.rho1", ri.rho1),
            ("risk_broker.beta0", rb.beta0),
            ("risk_broker.beta1", rb.beta1),
            ("risk_broker.rho0", rb.rho0),
            ("risk_broker.rho1", rb.rho1),
        ] {
            non_negative(field, v)?;
        }
        finite("c_belief", self.c_belief)?;
        Ok(())
    }

    /// Stable SHA-256 fingerprint of the parameter set, used in reports.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialise");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Learning parameters that can be stressed in the broker's model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningParam {
    KappaAlpha,
    SigmaAlpha,
    ThetaB,
    SigmaB,
}

impl LearningParam {
    pub const ALL: [LearningParam; 4] = [
        LearningParam::KappaAlpha,
        LearningParam::SigmaAlpha,
        LearningParam::ThetaB,
        LearningParam::SigmaB,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LearningParam::KappaAlpha => "kappa_alpha",
            LearningParam::SigmaAlpha => "sigma_alpha",
            LearningParam::ThetaB => "theta_b",
            LearningParam::SigmaB => "sigma_b",
        }
    }

    /// Copy of `params` with this parameter multiplied by `factor`.
    pub fn scaled(&self, params: &ModelParams, factor: f64) -> ModelParams {
        let mut out = *params;
        match self {
            LearningParam::KappaAlpha => out.kappa_alpha *= factor,
            LearningParam::SigmaAlpha => out.sigma_alpha *= factor,
            LearningParam::ThetaB => out.theta_b *= factor,
            LearningParam::SigmaB => out.sigma_b *= factor,
        }
        out
    }
}
