//! Model parameters, standing assumptions and coordinate transformations.
//!
//! The market model is a log-price with unknown two-valued drift. All solver
//! entry points take a [`ModelParams`] that has passed [`ModelParams::validate`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Market and preference parameters.
///
/// Drifts are for the log-price, i.e. `mu_i = beta_i - sigma^2/2` where
/// `beta_i` are the price drifts. Figures in the comparative-statics study
/// quote `mu` values directly, so that is the canonical input mode; use
/// [`ModelParams::from_betas`] to enter price drifts instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Low drift of the log-price (per unit time).
    pub mu0: f64,
    /// High drift of the log-price.
    pub mu1: f64,
    /// Volatility, > 0.
    pub sigma: f64,
    /// Discount rate, > 0.
    pub r: f64,
    /// Proportional transaction cost, > 0.
    pub kappa: f64,
    /// Permanent price-impact coefficient, > 0.
    pub alpha: f64,
    /// Prior belief that the drift is `mu1`, in (0, 1).
    pub pi0: f64,
}

impl ModelParams {
    /// Build from price drifts `beta_i`, converting via `mu = beta - sigma^2/2`.
    pub fn from_betas(
        beta0: f64,
        beta1: f64,
        sigma: f64,
        r: f64,
        kappa: f64,
        alpha: f64,
        pi0: f64,
    ) -> Self {
        ModelParams {
            mu0: beta0 - 0.5 * sigma * sigma,
            mu1: beta1 - 0.5 * sigma * sigma,
            sigma,
            r,
            kappa,
            alpha,
            pi0,
        }
    }

    /// Signal-to-noise ratio `(mu1 - mu0)/sigma`.
    pub fn gamma(&self) -> f64 {
        (self.mu1 - self.mu0) / self.sigma
    }

    /// Likelihood ratio `pi0/(1 - pi0)` of the prior.
    pub fn phi0(&self) -> f64 {
        self.pi0 / (1.0 - self.pi0)
    }

    /// Run every standing-assumption check.
    ///
    /// Fails with `InvalidInput` when any field is non-finite; otherwise
    /// returns the full report, pass or fail.
    pub fn validate(&self) -> Result<ValidationReport> {
        let fields = [
            self.mu0, self.mu1, self.sigma, self.r, self.kappa, self.alpha, self.pi0,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "model parameters must be finite".into(),
            ));
        }
        let s2 = self.sigma * self.sigma;
        let gamma = self.gamma();
        let mut checks = Vec::new();
        let mut push = |name: &str, slack: f64| {
            checks.push(ValidationCheck {
                name: name.to_string(),
                slack,
                passed: slack > 0.0,
            })
        };
        push("sigma > 0", self.sigma);
        push("kappa > 0", self.kappa);
        push("alpha > 0", self.alpha);
        push("r > 0", self.r);
        push("pi0 > 0", self.pi0);
        push("pi0 < 1", 1.0 - self.pi0);
        push("mu0 < mu1", self.mu1 - self.mu0);
        push("mu0 < 0", -self.mu0);
        // Well-posedness of the discount rate: r must dominate the growth
        // rate of the payoff, a drift-gap correction, and the deterministic
        // rate of the belief coordinate.
        push("r > mu1 + sigma^2/2", self.r - (self.mu1 + 0.5 * s2));
        push(
            "r > mu1 + sigma^2/2 + (2*mu1 + sigma^2)*(mu1 - mu0)/sigma^2",
            self.r - (self.mu1 + 0.5 * s2 + (2.0 * self.mu1 + s2) * (self.mu1 - self.mu0) / s2),
        );
        push(
            "r > gamma/(2*sigma) * |mu0 + mu1|",
            self.r - gamma / (2.0 * self.sigma) * (self.mu0 + self.mu1).abs(),
        );
        Ok(ValidationReport { checks })
    }

    /// Validate and return an `AssumptionViolation` error on failure.
    pub fn require_valid(&self) -> Result<ValidationReport> {
        let report = self.validate()?;
        if !report.passed() {
            return Err(Error::AssumptionViolation(report.failures().join("; ")));
        }
        Ok(report)
    }
}

/// One named inequality with its numeric slack (positive means satisfied).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Constants derived from a valid parameter set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DerivedQuantities {
    /// Signal-to-noise ratio.
    pub gamma: f64,
    /// Positive root of `sigma^2/2 n^2 + mu0 n - r = 0`.
    pub n0: f64,
    /// Positive root with `mu1`.
    pub n1: f64,
    /// Lower execution threshold `ln(kappa n0/(n0 - 1))`.
    pub x0_star: f64,
    /// Upper execution threshold with `n1`.
    pub x1_star: f64,
}

/// Positive root of `sigma^2/2 n^2 + mu n - r = 0`, computed so that no
/// cancellation occurs for either sign of `mu`.
pub fn positive_root(mu: f64, sigma: f64, r: f64) -> f64 {
    let s2 = sigma * sigma;
    let disc = (mu * mu + 2.0 * s2 * r).sqrt();
    if mu >= 0.0 {
        2.0 * r / (mu + disc)
    } else {
        (-mu + disc) / s2
    }
}

/// Full-information selling threshold for a known drift `mu`.
pub fn threshold(mu: f64, sigma: f64, r: f64, kappa: f64) -> Result<(f64, f64)> {
    let n = positive_root(mu, sigma, r);
    if n <= 1.0 {
        return Err(Error::AssumptionViolation(format!(
            "quadratic root n = {n} <= 1; requires r > mu + sigma^2/2"
        )));
    }
    Ok((n, (kappa * n / (n - 1.0)).ln()))
}

pub fn derive(p: &ModelParams) -> Result<DerivedQuantities> {
    p.require_valid()?;
    let (n0, x0_star) = threshold(p.mu0, p.sigma, p.r, p.kappa)?;
    let (n1, x1_star) = threshold(p.mu1, p.sigma, p.r, p.kappa)?;
    Ok(DerivedQuantities {
        gamma: p.gamma(),
        n0,
        n1,
        x0_star,
        x1_star,
    })
}

/// Belief `pi` in (0,1) to likelihood ratio `phi = pi/(1 - pi)`.
pub fn belief_to_likelihood(pi: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::Domain(format!("belief {pi} not in (0, 1)")));
    }
    Ok(pi / (1.0 - pi))
}

/// Likelihood ratio `phi > 0` to belief `pi = phi/(1 + phi)`.
pub fn likelihood_to_belief(phi: f64) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::Domain(format!("likelihood ratio {phi} not > 0")));
    }
    Ok(phi / (1.0 + phi))
}

/// Parabolic coordinate `z = (sigma/gamma) ln(phi) - x`.
pub fn to_parabolic(x: f64, phi: f64, p: &ModelParams) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::Domain(format!("likelihood ratio {phi} not > 0")));
    }
    Ok(p.sigma / p.gamma() * phi.ln() - x)
}

/// Inverse of [`to_parabolic`]: `phi = exp((gamma/sigma)(x + z))`.
pub fn from_parabolic(x: f64, z: f64, p: &ModelParams) -> f64 {
    (p.gamma() / p.sigma * (x + z)).exp()
}
