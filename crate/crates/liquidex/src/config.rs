//! Run configuration: the JSON file consumed by the command-line front end.
//!
//! Every field is explicit — there are no silent defaults. The resolved
//! config (after CLI overrides such as `--seed`) is echoed verbatim into the
//! run manifest so any output can be reproduced bit-exactly.

use serde::{Deserialize, Serialize};

use crate::benchmark::DriftWeighting;
use crate::boundary::SolverConfig;
use crate::error::{Error, Result};
use crate::execution::Policy;
use crate::params::ModelParams;
use crate::value::QuadratureConfig;

/// A uniform grid specification `min..=max` with `n` nodes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config(format!("{name}: grid needs n >= 1")));
        }
        if !self.min.is_finite() || !self.max.is_finite() || self.min > self.max {
            return Err(Error::Config(format!(
                "{name}: need finite min <= max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.n == 1 && self.min != self.max {
            return Err(Error::Config(format!(
                "{name}: n = 1 requires min == max"
            )));
        }
        Ok(())
    }

    /// Materialise the grid nodes.
    pub fn nodes(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.min];
        }
        (0..self.n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

/// Grids for the value-surface command (`value.csv` rows are the product).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueGrids {
    pub x: GridSpec,
    pub pi: GridSpec,
    pub y: GridSpec,
}

/// Simulation settings for the `simulate` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    /// Path horizon in years.
    pub horizon: f64,
    /// Time step in years.
    pub dt: f64,
    /// Initial log-price.
    pub x0: f64,
    /// Initial inventory.
    pub y0: f64,
    pub policy: Policy,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("simulation: n_paths must be >= 1".into()));
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) || self.dt > self.horizon {
            return Err(Error::Config(format!(
                "simulation: need 0 < dt <= horizon, got dt = {}, horizon = {}",
                self.dt, self.horizon
            )));
        }
        if !self.x0.is_finite() || !(self.y0 >= 0.0) {
            return Err(Error::Config(
                "simulation: x0 must be finite and y0 >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// The full run configuration. All sections are mandatory; unknown fields
/// are rejected so typos cannot pass as defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ModelParams,
    pub solver: SolverConfig,
    pub quadrature: QuadratureConfig,
    pub value_grids: ValueGrids,
    pub simulation: SimulationConfig,
    /// Weighting convention for the known-average-drift benchmark.
    pub drift_weighting: DriftWeighting,
    pub output_dir: String,
    /// Master seed; `--seed` on the command line overrides it.
    pub seed: u64,
}

impl RunConfig {
    /// Parse a config from JSON text. Parse failures are input errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    /// Structural validation of every sub-config (cheap; no model checks).
    pub fn validate_structure(&self) -> Result<()> {
        self.solver.validate()?;
        self.quadrature.validate()?;
        self.value_grids.x.validate("value_grids.x")?;
        self.value_grids.pi.validate("value_grids.pi")?;
        self.value_grids.y.validate("value_grids.y")?;
        if self.value_grids.pi.min <= 0.0 || self.value_grids.pi.max >= 1.0 {
            return Err(Error::Config(
                "value_grids.pi must lie strictly inside (0, 1)".into(),
            ));
        }
        if self.value_grids.y.min < 0.0 {
            return Err(Error::Config("value_grids.y must be nonnegative".into()));
        }
        self.simulation.validate()?;
        if self.output_dir.is_empty() {
            return Err(Error::Config("output_dir must be nonempty".into()));
        }
        Ok(())
    }
}
