//! Toolkit configuration file: one TOML document with a section per module.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Validation reports the dotted field path together with the reason.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SimConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    pub sim: SimConfig,
    pub datagen: DatagenConfig,
    pub calibration: CalibrationConfig,
    pub filter: FilterFileConfig,
    pub experiments: ExperimentsConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        ToolkitConfig {
            seed: 42,
            sim: SimConfig::default(),
            datagen: DatagenConfig::default(),
            calibration: CalibrationConfig::default(),
            filter: FilterFileConfig::default(),
            experiments: ExperimentsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    /// Number of historical runs (distinct "days") to generate.
    pub historical_runs: usize,
    /// Optional Gaussian noise added to recorded positions, metres. 0 = off.
    pub gps_noise_std_m: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            historical_runs: 10,
            gps_noise_std_m: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Which simpler model variant is calibrated (and later filtered).
    pub model_variant: Variant,
    /// Candidates drawn per iteration.
    pub population: usize,
    /// Maximum iterations.
    pub iterations: usize,
    /// Fraction of the population kept as elites.
    pub elite_ratio: f64,
    /// Step size when blending refitted distribution parameters.
    pub smoothing: f64,
    /// Model replications per candidate evaluation (forced to 1 for the
    /// deterministic variant).
    pub replications: usize,
    /// Stop when every sampling sigma falls below this fraction of its
    /// dimension's bound range.
    pub sigma_tol_frac: f64,
    /// Upper arrival-rate bound for the search, passengers/minute.
    /// Unset: 1.25 x sim.max_demand_per_min.
    pub max_arr_bound_per_min: Option<f64>,
    /// Departure-rate search bounds (the last stop is pinned to 1).
    pub dep_bounds: [f64; 2],
    /// Traffic-speed search bounds, m/s. Unset: [0.5, 1.5] x initial speed.
    pub speed_bounds_mps: Option<[f64; 2]>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            model_variant: Variant::Stochastic,
            population: 100,
            iterations: 50,
            elite_ratio: 0.1,
            smoothing: 0.7,
            replications: 8,
            sigma_tol_frac: 1e-3,
            max_arr_bound_per_min: None,
            dep_bounds: [0.05, 0.5],
            speed_bounds_mps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterFileConfig {
    /// Ensemble size.
    pub particles: usize,
    /// Gaussian likelihood width on positions, metres.
    pub obs_noise_m: f64,
    /// Time between assimilated observations, seconds (multiple of dt).
    pub interval_s: f64,
    /// Roughening noise per parameter dimension, as a fraction of that
    /// dimension's calibration-bound range.
    pub diversify_frac: f64,
    /// Resample only when N_eff < threshold x particles. 0 = every step.
    pub neff_threshold: f64,
    /// Emit a free-running forecast to the horizon every this many seconds.
    /// 0 = off.
    pub forecast_interval_s: f64,
}

impl Default for FilterFileConfig {
    fn default() -> Self {
        FilterFileConfig {
            particles: 500,
            obs_noise_m: 5.0,
            interval_s: 30.0,
            diversify_frac: 0.05,
            neff_threshold: 0.0,
            forecast_interval_s: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsConfig {
    /// Replications per grid cell.
    pub replications: usize,
    /// Drift rate held fixed while max demand is swept, percent.
    pub fixed_xi_pct: f64,
    /// Max demand held fixed while the drift rate is swept, passengers/min.
    pub fixed_max_demand_per_min: f64,
    pub max_demand_grid: Vec<f64>,
    pub xi_grid: Vec<f64>,
    /// Also run the filter-without-calibration scenario.
    pub include_scenario4: bool,
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        ExperimentsConfig {
            replications: 10,
            fixed_xi_pct: 7.0,
            fixed_max_demand_per_min: 2.0,
            max_demand_grid: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5],
            xi_grid: vec![0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5],
            include_scenario4: false,
        }
    }
}

impl ToolkitConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.datagen.validate()?;
        self.calibration.validate()?;
        self.filter.validate(&self.sim)?;
        self.experiments.validate()?;
        Ok(())
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.historical_runs < 2 {
            return Err(Error::invalid_config(
                "datagen.historical_runs",
                "at least two historical runs required",
            ));
        }
        if self.gps_noise_std_m < 0.0 {
            return Err(Error::invalid_config(
                "datagen.gps_noise_std_m",
                "noise std must be non-negative",
            ));
        }
        Ok(())
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_variant == Variant::Truth {
            return Err(Error::invalid_config(
                "calibration.model_variant",
                "calibrate a simpler variant (stochastic or deterministic), not truth",
            ));
        }
        if !(self.elite_ratio > 0.0 && self.elite_ratio < 1.0) {
            return Err(Error::invalid_config(
                "calibration.elite_ratio",
                "elite ratio must lie in (0,1)",
            ));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::invalid_config(
                "calibration.smoothing",
                "smoothing must lie in (0,1]",
            ));
        }
        if self.population < 2 {
            return Err(Error::invalid_config(
                "calibration.population",
                "population must be at least 2",
            ));
        }
        if (self.elite_ratio * self.population as f64).ceil() < 2.0 {
            return Err(Error::invalid_config(
                "calibration.population",
                "elite_ratio x population must keep at least 2 elites",
            ));
        }
        if self.iterations == 0 {
            return Err(Error::invalid_config(
                "calibration.iterations",
                "at least one iteration required",
            ));
        }
        if self.replications == 0 {
            return Err(Error::invalid_config(
                "calibration.replications",
                "at least one replication required",
            ));
        }
        if !(self.sigma_tol_frac > 0.0) {
            return Err(Error::invalid_config(
                "calibration.sigma_tol_frac",
                "tolerance must be positive",
            ));
        }
        let [lo, hi] = self.dep_bounds;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid_config(
                "calibration.dep_bounds",
                "departure-rate bounds must satisfy 0 <= lo <= hi <= 1",
            ));
        }
        if let Some(b) = self.max_arr_bound_per_min {
            if !(b > 0.0) {
                return Err(Error::invalid_config(
                    "calibration.max_arr_bound_per_min",
                    "arrival-rate bound must be positive",
                ));
            }
        }
        if let Some([lo, hi]) = self.speed_bounds_mps {
            if !(0.0 < lo && lo < hi) {
                return Err(Error::invalid_config(
                    "calibration.speed_bounds_mps",
                    "speed bounds must satisfy 0 < lo < hi",
                ));
            }
        }
        Ok(())
    }

    /// Effective K_I: the deterministic variant needs no replications.
    pub fn effective_replications(&self) -> usize {
        match self.model_variant {
            Variant::Deterministic => 1,
            _ => self.replications,
        }
    }
}

impl FilterFileConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::invalid_config(
                "filter.particles",
                "at least two particles required",
            ));
        }
        if !(self.obs_noise_m > 0.0) {
            return Err(Error::invalid_config(
                "filter.obs_noise_m",
                "observation noise must be positive",
            ));
        }
        if !(self.interval_s > 0.0) || (self.interval_s / sim.dt).fract().abs() > 1e-9 {
            return Err(Error::invalid_config(
                "filter.interval_s",
                "assimilation interval must be a positive multiple of sim.dt_s",
            ));
        }
        if self.diversify_frac < 0.0 {
            return Err(Error::invalid_config(
                "filter.diversify_frac",
                "diversification fraction must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.neff_threshold) {
            return Err(Error::invalid_config(
                "filter.neff_threshold",
                "threshold is a fraction of the ensemble size in [0,1]",
            ));
        }
        if self.forecast_interval_s < 0.0 {
            return Err(Error::invalid_config(
                "filter.forecast_interval_s",
                "forecast interval must be non-negative",
            ));
        }
        Ok(())
    }
}

impl ExperimentsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid_config(
                "experiments.replications",
                "at least one replication required",
            ));
        }
        if self.max_demand_grid.is_empty() && self.xi_grid.is_empty() {
            return Err(Error::invalid_config(
                "experiments.max_demand_grid",
                "at least one sweep axis must be non-empty",
            ));
        }
        if !(self.fixed_max_demand_per_min > 0.0) {
            return Err(Error::invalid_config(
                "experiments.fixed_max_demand_per_min",
                "fixed max demand must be positive",
            ));
        }
        if !(0.0..100.0).contains(&self.fixed_xi_pct) {
            return Err(Error::invalid_config(
                "experiments.fixed_xi_pct",
                "fixed drift rate must lie in [0,100)",
            ));
        }
        Ok(())
    }
}

/// Parse a configuration document. Empty input yields the defaults.
pub fn parse_config_str(text: &str) -> Result<ToolkitConfig> {
    let cfg: ToolkitConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse raw bytes (fuzzing entry point). Never panics on malformed input.
pub fn parse_config_bytes(bytes: &[u8]) -> Result<ToolkitConfig> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
    parse_config_str(text)
}

/// Load and validate a configuration file.
pub fn load_config(path: &Path) -> Result<ToolkitConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}
