//! Route/fleet configuration for a simulation run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which flavour of the model to run.
///
/// `Truth` is the data-generating model: stochastic boarding plus a gradual
/// drift of traffic speed and arrival rates over the run. `Stochastic` keeps
/// the Poisson boarding but holds parameters fixed. `Deterministic` replaces
/// every draw with its expectation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Truth,
    Stochastic,
    Deterministic,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Truth => "truth",
            Variant::Stochastic => "stochastic",
            Variant::Deterministic => "deterministic",
        };
        f.write_str(s)
    }
}

/// Fixed geometry, fleet and tick settings for one simulation.
///
/// Demand bounds are expressed in passengers per minute (the natural unit for
/// a bus stop); they are converted to per-second rates when parameters are
/// sampled. All other times are seconds, distances metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub variant: Variant,
    pub fleet_size: usize,
    pub num_stops: usize,
    /// Distance between consecutive stops, metres.
    #[serde(rename = "stop_spacing_m")]
    pub stop_spacing: f64,
    /// Tick length, seconds.
    #[serde(rename = "dt_s")]
    pub dt: f64,
    /// Run horizon, seconds.
    #[serde(rename = "horizon_s")]
    pub horizon: f64,
    /// Time between consecutive dispatches, seconds.
    #[serde(rename = "headway_s")]
    pub headway: f64,
    /// Dwell-time coefficients: fixed overhead, per boarder, per alighter (seconds).
    pub theta: [f64; 3],
    /// Drift rate xi, percent of total change over the full horizon.
    /// Only the truth variant applies it.
    #[serde(rename = "dynamic_rate_pct")]
    pub dynamic_rate: f64,
    /// Demand bounds, passengers per minute per stop.
    #[serde(rename = "min_demand_per_min")]
    pub min_demand: f64,
    #[serde(rename = "max_demand_per_min")]
    pub max_demand: f64,
    /// Radius around a stop within which a bus is "at" the stop, metres.
    #[serde(rename = "geofence_m")]
    pub geofence: f64,
    /// Bus capacity, passengers.
    pub capacity: u32,
    /// Acceleration applied while below traffic speed, m/s^2.
    #[serde(rename = "acceleration_mps2")]
    pub acceleration: f64,
    /// Traffic speed at t = 0, m/s. Sampled parameter vectors start here.
    #[serde(rename = "traffic_speed_mps")]
    pub initial_traffic_speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            variant: Variant::Truth,
            fleet_size: 10,
            num_stops: 20,
            stop_spacing: 2000.0,
            dt: 1.0,
            horizon: 10800.0,
            headway: 600.0,
            theta: [3.0, 1.0, 0.85],
            dynamic_rate: 0.0,
            min_demand: 0.5,
            max_demand: 2.0,
            geofence: 50.0,
            capacity: 85,
            acceleration: 3.0,
            initial_traffic_speed: 14.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid_config(field, reason))
            }
        };
        check(self.dt > 0.0, "sim.dt_s", "tick length must be positive")?;
        check(self.horizon > 0.0, "sim.horizon_s", "horizon must be positive")?;
        check(
            (self.horizon / self.dt).fract().abs() < 1e-9,
            "sim.horizon_s",
            "horizon must be a multiple of dt",
        )?;
        check(self.num_stops >= 2, "sim.num_stops", "at least two stops required")?;
        check(self.fleet_size >= 1, "sim.fleet_size", "at least one bus required")?;
        check(
            self.stop_spacing > 0.0,
            "sim.stop_spacing_m",
            "stop spacing must be positive",
        )?;
        check(self.headway > 0.0, "sim.headway_s", "headway must be positive")?;
        check(
            self.min_demand > 0.0 && self.min_demand <= self.max_demand,
            "sim.min_demand_per_min",
            "demand bounds must satisfy 0 < min <= max",
        )?;
        check(self.geofence > 0.0, "sim.geofence_m", "geofence must be positive")?;
        check(self.capacity > 0, "sim.capacity", "capacity must be positive")?;
        check(
            self.acceleration > 0.0,
            "sim.acceleration_mps2",
            "acceleration must be positive",
        )?;
        check(
            self.initial_traffic_speed > 0.0,
            "sim.traffic_speed_mps",
            "traffic speed must be positive",
        )?;
        check(
            self.dynamic_rate >= 0.0 && self.dynamic_rate < 100.0,
            "sim.dynamic_rate_pct",
            "dynamic rate must lie in [0, 100)",
        )?;
        check(
            self.theta.iter().all(|&v| v >= 0.0),
            "sim.theta",
            "dwell coefficients must be non-negative",
        )?;
        Ok(())
    }

    /// Number of ticks in a run.
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Stop positions: stop m sits (m-1) spacings from the origin.
    pub fn stop_positions(&self) -> Vec<f64> {
        (0..self.num_stops)
            .map(|m| m as f64 * self.stop_spacing)
            .collect()
    }

    /// Scheduled dispatch time of bus `j` (0-based).
    pub fn dispatch_time(&self, bus: usize) -> f64 {
        bus as f64 * self.headway
    }

    /// Whether boarding counts are sampled rather than taken in expectation.
    ///
    /// The truth model's stochasticity is controlled by the demand spread:
    /// with degenerate bounds (max == min) it collapses to the deterministic
    /// model.
    pub fn stochastic_boarding(&self) -> bool {
        match self.variant {
            Variant::Deterministic => false,
            Variant::Stochastic => true,
            Variant::Truth => self.max_demand > self.min_demand,
        }
    }

    /// Demand bounds converted to passengers per second.
    pub fn demand_bounds_per_sec(&self) -> (f64, f64) {
        (self.min_demand / 60.0, self.max_demand / 60.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_zero_dt() {
        let cfg = SimConfig { dt: 0.0, ..SimConfig::default() };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("sim.dt_s"));
    }

    #[test]
    fn rejects_single_stop() {
        let cfg = SimConfig { num_stops: 1, ..SimConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn truth_collapses_with_degenerate_demand() {
        let cfg = SimConfig {
            min_demand: 0.5,
            max_demand: 0.5,
            ..SimConfig::default()
        };
        assert!(!cfg.stochastic_boarding());
        let cfg = SimConfig { max_demand: 2.0, ..cfg };
        assert!(cfg.stochastic_boarding());
    }
}
