//! Path simulation under both probability measures and the Bayesian filter.
//!
//! Observation paths are simulated with exact Gaussian increments; the belief
//! is filled through the closed-form filter so it can never leave (0, 1).
//! Under the decoupling measure both the price and the likelihood ratio at an
//! independent exponential time have closed-form laws, so that sampling is
//! exact as well.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Counter-based stream handle: the same `(master_seed, stream_id)` always
/// reproduces the identical draw sequence, distinct ids give independent
/// streams. Parallel workers take pre-assigned ids and need no coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStreamSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStreamSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngStreamSpec {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Which drift drives an observation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Draw the drift from the prior: `mu1` with probability `pi0`.
    PriorDraw,
    FixedMu0,
    FixedMu1,
}

/// Drift label attached to a simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftLabel {
    Low,
    High,
}

/// A sampled trajectory of the observation price together with the filter.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub dt: f64,
    pub times: Vec<f64>,
    /// Brownian increments driving the path, one per step.
    pub brownian: Vec<f64>,
    /// Uncontrolled log-price per grid point.
    pub x_path: Vec<f64>,
    /// Likelihood ratio per grid point.
    pub phi_path: Vec<f64>,
    /// Belief per grid point, `phi/(1 + phi)` pointwise.
    pub pi_path: Vec<f64>,
    /// True drift, `None` for decoupled-measure paths.
    pub true_drift: Option<DriftLabel>,
    pub seed: RngStreamSpec,
}

impl PathBundle {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Dump as CSV with columns `t,x,phi,pi`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "x", "phi", "pi"])?;
        for i in 0..self.len() {
            wtr.write_record([
                self.times[i].to_string(),
                self.x_path[i].to_string(),
                self.phi_path[i].to_string(),
                self.pi_path[i].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Closed-form filter: `phi_t = phi0 * exp((gamma/sigma)(x_t - x0 - (mu0+mu1)/2 * t))`.
pub fn filter_likelihood(
    p: &ModelParams,
    times: &[f64],
    x_path: &[f64],
    x0: f64,
    phi0: f64,
) -> Result<Vec<f64>> {
    if !(phi0 > 0.0) {
        return Err(Error::Domain(format!("phi0 = {phi0} must be > 0")));
    }
    let gamma = p.gamma();
    let half_sum = 0.5 * (p.mu0 + p.mu1);
    Ok(times
        .iter()
        .zip(x_path)
        .map(|(&t, &x)| phi0 * (gamma / p.sigma * (x - x0 - half_sum * t)).exp())
        .collect())
}

/// Simulate the uncontrolled observation path on a uniform grid and fill the
/// filter. Increments are exact Gaussians with the scenario's drift.
pub fn simulate_observation(
    p: &ModelParams,
    x0: f64,
    pi0: f64,
    horizon: f64,
    dt: f64,
    seed: RngStreamSpec,
    scenario: Scenario,
) -> Result<PathBundle> {
    if !(dt > 0.0) || !(horizon >= dt) || !dt.is_finite() || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!(
            "need 0 < dt <= horizon, got dt = {dt}, horizon = {horizon}"
        )));
    }
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return Err(Error::Domain(format!("pi0 = {pi0} not in (0, 1)")));
    }
    let mut rng = seed.rng();
    let label = match scenario {
        Scenario::FixedMu0 => DriftLabel::Low,
        Scenario::FixedMu1 => DriftLabel::High,
        Scenario::PriorDraw => {
            if rng.gen::<f64>() < pi0 {
                DriftLabel::High
            } else {
                DriftLabel::Low
            }
        }
    };
    let mu = match label {
        DriftLabel::Low => p.mu0,
        DriftLabel::High => p.mu1,
    };
    let n_steps = (horizon / dt).round().max(1.0) as usize;
    let sqrt_dt = dt.sqrt();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut brownian = Vec::with_capacity(n_steps);
    let mut x_path = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    x_path.push(x0);
    let mut x = x0;
    for i in 0..n_steps {
        let dw: f64 = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
        brownian.push(dw);
        x += mu * dt + p.sigma * dw;
        times.push((i + 1) as f64 * dt);
        x_path.push(x);
    }
    let phi0 = pi0 / (1.0 - pi0);
    let phi_path = filter_likelihood(p, &times, &x_path, x0, phi0)?;
    let pi_path = phi_path.iter().map(|&phi| phi / (1.0 + phi)).collect();
    Ok(PathBundle {
        dt,
        times,
        brownian,
        x_path,
        phi_path,
        pi_path,
        true_drift: Some(label),
        seed,
    })
}

/// Build a path from externally supplied Brownian increments (test hook and
/// deterministic replay).
pub fn path_from_increments(
    p: &ModelParams,
    x0: f64,
    pi0: f64,
    dt: f64,
    increments: &[f64],
    label: DriftLabel,
) -> Result<PathBundle> {
    let mu = match label {
        DriftLabel::Low => p.mu0,
        DriftLabel::High => p.mu1,
    };
    let mut times = vec![0.0];
    let mut x_path = vec![x0];
    let mut x = x0;
    for (i, &dw) in increments.iter().enumerate() {
        x += mu * dt + p.sigma * dw;
        times.push((i + 1) as f64 * dt);
        x_path.push(x);
    }
    let phi0 = pi0 / (1.0 - pi0);
    let phi_path = filter_likelihood(p, &times, &x_path, x0, phi0)?;
    let pi_path = phi_path.iter().map(|&phi| phi / (1.0 + phi)).collect();
    Ok(PathBundle {
        dt,
        times,
        brownian: increments.to_vec(),
        x_path,
        phi_path,
        pi_path,
        true_drift: Some(label),
        seed: RngStreamSpec::new(0, 0),
    })
}

/// One exact draw of the state at an independent exponential time under the
/// decoupling measure.
#[derive(Debug, Clone, Copy)]
pub struct DecoupledDraw {
    pub zeta: f64,
    pub x: f64,
    pub phi: f64,
}

/// Sample `(zeta, X_zeta, Phi_zeta)` with `zeta ~ Exp(r)` independent of the
/// Brownian driver; the same normal drives price and likelihood ratio.
pub fn sample_decoupled_q(
    p: &ModelParams,
    x: f64,
    phi: f64,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Result<Vec<DecoupledDraw>> {
    if !(phi > 0.0) {
        return Err(Error::Domain(format!("phi = {phi} must be > 0")));
    }
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    let gamma = p.gamma();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.gen::<f64>();
        // Inverse CDF; 1 - u avoids ln(0) since gen() is in [0, 1).
        let zeta = -(1.0 - u).ln() / p.r;
        let n: f64 = rng.sample(StandardNormal);
        let sq = zeta.sqrt();
        out.push(DecoupledDraw {
            zeta,
            x: x + p.mu0 * zeta + p.sigma * sq * n,
            phi: phi * (-0.5 * gamma * gamma * zeta + gamma * sq * n).exp(),
        });
    }
    Ok(out)
}

/// Same law as [`sample_decoupled_q`] but with the exponential clock pinned
/// to `t` (test hook for the conditional Gaussian law).
pub fn sample_decoupled_q_at(
    p: &ModelParams,
    x: f64,
    phi: f64,
    t: f64,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Vec<DecoupledDraw> {
    let gamma = p.gamma();
    let sq = t.sqrt();
    (0..count)
        .map(|_| {
            let n: f64 = rng.sample(StandardNormal);
            DecoupledDraw {
                zeta: t,
                x: x + p.mu0 * t + p.sigma * sq * n,
                phi: phi * (-0.5 * gamma * gamma * t + gamma * sq * n).exp(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p1() -> ModelParams {
        ModelParams {
            mu0: -0.01,
            mu1: 0.007,
            sigma: 0.17,
            r: 0.07,
            kappa: 3.0,
            alpha: 0.5,
            pi0: 0.6,
        }
    }

    #[test]
    fn one_step_gaussian_law() {
        let p = p1();
        let n = 100_000;
        let mut sum = 0.0;
        for i in 0..n {
            let path = simulate_observation(
                &p,
                0.0,
                0.5,
                0.01,
                0.01,
                RngStreamSpec::new(11, i),
                Scenario::FixedMu0,
            )
            .unwrap();
            sum += path.x_path[1] - path.x_path[0];
        }
        let mean = sum / n as f64;
        let se = p.sigma * 0.01f64.sqrt() / (n as f64).sqrt();
        assert!(
            (mean - p.mu0 * 0.01).abs() <= 3.0 * se,
            "mean {mean} vs {}",
            p.mu0 * 0.01
        );
    }

    #[test]
    fn zeroed_brownian_is_deterministic_drift() {
        let p = p1();
        let path =
            path_from_increments(&p, 1.0, 0.5, 0.1, &[0.0; 50], DriftLabel::Low).unwrap();
        for (i, &x) in path.x_path.iter().enumerate() {
            assert_relative_eq!(x, 1.0 + p.mu0 * 0.1 * i as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn filter_closed_form_examples() {
        let p = p1();
        // Exponent vanishes on the balanced ray.
        let t = 2.0;
        let phi = filter_likelihood(&p, &[0.0, t], &[0.0, 0.5 * (p.mu0 + p.mu1) * t], 0.0, 1.5)
            .unwrap();
        assert_relative_eq!(phi[0], 1.5);
        assert_relative_eq!(phi[1], 1.5, epsilon = 1e-12);

        let phi = filter_likelihood(&p, &[1.0], &[0.1], 0.0, 1.5).unwrap();
        let expected = 1.5 * (0.1f64 / 0.17 * (0.1 - 0.5 * (-0.003))).exp();
        assert_relative_eq!(phi[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn filter_matches_euler_on_belief_sde() {
        // d Pi = gamma Pi (1 - Pi) dWbar with dWbar = (dX - (mu0 + gamma
        // sigma Pi) dt)/sigma; the closed form must agree to O(dt).
        let p = p1();
        let dt = 1e-4;
        let path = simulate_observation(
            &p,
            0.0,
            0.5,
            1.0,
            dt,
            RngStreamSpec::new(7, 0),
            Scenario::FixedMu1,
        )
        .unwrap();
        let gamma = p.gamma();
        let mut pi = 0.5;
        for i in 0..path.brownian.len() {
            let dx = path.x_path[i + 1] - path.x_path[i];
            let drift = p.mu0 + p.sigma * gamma * pi;
            let dwbar = (dx - drift * dt) / p.sigma;
            pi += gamma * pi * (1.0 - pi) * dwbar;
        }
        let filtered = *path.pi_path.last().unwrap();
        assert!(
            (pi - filtered).abs() < 50.0 * dt,
            "euler {pi} vs filter {filtered}"
        );
    }

    #[test]
    fn belief_martingale_under_prior_draw() {
        let p = p1();
        let n = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let path = simulate_observation(
                &p,
                0.0,
                0.5,
                5.0,
                0.05,
                RngStreamSpec::new(23, i),
                Scenario::PriorDraw,
            )
            .unwrap();
            let last = *path.pi_path.last().unwrap();
            sum += last;
            sum_sq += last * last;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn belief_drifts_down_under_fixed_mu0() {
        let p = p1();
        let n = 5_000;
        let mut sum = 0.0;
        for i in 0..n {
            let path = simulate_observation(
                &p,
                0.0,
                0.5,
                200.0,
                0.5,
                RngStreamSpec::new(29, i),
                Scenario::FixedMu0,
            )
            .unwrap();
            sum += *path.pi_path.last().unwrap();
        }
        let mean = sum / n as f64;
        assert!(mean < 0.45, "ensemble mean {mean}");
    }

    #[test]
    fn exponential_clock_mean() {
        let p = p1();
        let mut rng = RngStreamSpec::new(3, 0).rng();
        let draws = sample_decoupled_q(&p, 0.0, 1.0, &mut rng, 1_000_000).unwrap();
        let mean: f64 = draws.iter().map(|d| d.zeta).sum::<f64>() / draws.len() as f64;
        // Exp(r) has mean and stdev 1/r.
        let se = (1.0 / p.r) / (draws.len() as f64).sqrt();
        assert!((mean - 1.0 / p.r).abs() <= 3.0 * se);
    }

    #[test]
    fn phi_is_q_martingale_at_exponential_time() {
        let p = p1();
        let mut rng = RngStreamSpec::new(5, 0).rng();
        let phi0 = 1.3;
        let draws = sample_decoupled_q(&p, 0.0, phi0, &mut rng, 200_000).unwrap();
        let mean: f64 = draws.iter().map(|d| d.phi).sum::<f64>() / draws.len() as f64;
        let var: f64 = draws
            .iter()
            .map(|d| (d.phi - mean) * (d.phi - mean))
            .sum::<f64>()
            / draws.len() as f64;
        let se = (var / draws.len() as f64).sqrt();
        assert!((mean - phi0).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn conditional_law_is_gaussian_ks() {
        // Kolmogorov-Smirnov at 1% against Normal(x + mu0 t, sigma^2 t).
        let p = p1();
        let t = 1.7;
        let mut rng = RngStreamSpec::new(13, 0).rng();
        let n = 100_000;
        let mut xs: Vec<f64> = sample_decoupled_q_at(&p, 0.3, 1.0, t, &mut rng, n)
            .iter()
            .map(|d| d.x)
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = 0.3 + p.mu0 * t;
        let sd = p.sigma * t.sqrt();
        let normal_cdf = |v: f64| 0.5 * (1.0 + erf((v - mean) / (sd * std::f64::consts::SQRT_2)));
        let mut d_stat: f64 = 0.0;
        for (i, &v) in xs.iter().enumerate() {
            let cdf = normal_cdf(v);
            d_stat = d_stat
                .max((cdf - i as f64 / n as f64).abs())
                .max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        // 1% critical value 1.63/sqrt(n).
        assert!(d_stat < 1.63 / (n as f64).sqrt(), "KS statistic {d_stat}");
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7; plenty for a KS test.
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }

    #[test]
    fn deterministic_given_stream_spec() {
        let p = p1();
        let spec = RngStreamSpec::new(99, 7);
        let a = simulate_observation(&p, 0.0, 0.6, 1.0, 0.01, spec, Scenario::PriorDraw).unwrap();
        let b = simulate_observation(&p, 0.0, 0.6, 1.0, 0.01, spec, Scenario::PriorDraw).unwrap();
        assert_eq!(a.x_path, b.x_path);
        assert_eq!(a.brownian, b.brownian);
        assert_eq!(a.true_drift, b.true_drift);
    }

    #[test]
    fn coupling_identity_z_deterministic() {
        let p = p1();
        let path = simulate_observation(
            &p,
            0.2,
            0.6,
            2.0,
            0.01,
            RngStreamSpec::new(42, 1),
            Scenario::PriorDraw,
        )
        .unwrap();
        let gamma = p.gamma();
        let z0 = p.sigma / gamma * path.phi_path[0].ln() - path.x_path[0];
        for i in 0..path.len() {
            let z = p.sigma / gamma * path.phi_path[i].ln() - path.x_path[i];
            let expected = z0 - 0.5 * (p.mu0 + p.mu1) * path.times[i];
            assert_relative_eq!(z, expected, epsilon = 1e-9, max_relative = 1e-9);
        }
    }
}
