//! Model state: buses, stops, parameter vector, observations.

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusStatus {
    Idle,
    Moving,
    Dwelling,
    Finished,
}

impl BusStatus {
    /// Numeric code used in observation vectors. Idle is 0 so that
    /// pre-dispatch observation rows are all zero.
    pub fn code(self) -> u8 {
        match self {
            BusStatus::Idle => 0,
            BusStatus::Moving => 1,
            BusStatus::Dwelling => 2,
            BusStatus::Finished => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BusStatus::Idle => "IDLE",
            BusStatus::Moving => "MOVING",
            BusStatus::Dwelling => "DWELLING",
            BusStatus::Finished => "FINISHED",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "IDLE" => Ok(BusStatus::Idle),
            "MOVING" => Ok(BusStatus::Moving),
            "DWELLING" => Ok(BusStatus::Dwelling),
            "FINISHED" => Ok(BusStatus::Finished),
            other => Err(Error::Malformed(format!("unknown bus status {other:?}"))),
        }
    }

    /// En route: dispatched and not yet finished.
    pub fn is_active(self) -> bool {
        matches!(self, BusStatus::Moving | BusStatus::Dwelling)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusState {
    pub bus_id: u32,
    /// Scheduled dispatch time, seconds.
    pub dispatch_time: f64,
    /// m/s^2 while below traffic speed.
    pub acceleration: f64,
    /// Current speed, m/s. Zero unless MOVING.
    pub speed: f64,
    /// Metres from the route origin. Non-decreasing over a run.
    pub position: f64,
    pub occupancy: u32,
    pub status: BusStatus,
    /// Departure time from the current stop; valid while DWELLING.
    pub leave_stop_time: f64,
    /// Stops already dwelled at (or finished at), in visit order.
    pub visited_stops: Vec<u32>,
    pub capacity: u32,
}

impl BusState {
    fn fresh(bus_id: u32, cfg: &SimConfig) -> Self {
        BusState {
            bus_id,
            dispatch_time: cfg.dispatch_time(bus_id as usize),
            acceleration: cfg.acceleration,
            speed: 0.0,
            position: 0.0,
            occupancy: 0,
            status: BusStatus::Idle,
            leave_stop_time: 0.0,
            visited_stops: Vec::new(),
            capacity: cfg.capacity,
        }
    }

    /// Index of the next stop this bus has not yet visited.
    pub fn next_stop(&self) -> usize {
        self.visited_stops.len()
    }
}

/// Per-stop bookkeeping that changes during a run.
///
/// `last_visit_time` holds the arrival time of the last bus that dwelled
/// here; boarding gaps are measured arrival-to-arrival. It starts at the
/// schedule origin (t = 0) so the first bus collects everyone who has been
/// waiting since service start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopState {
    pub stop_id: u32,
    /// Metres from the route origin.
    pub position: f64,
    pub geofence_radius: f64,
    pub last_visit_time: f64,
    /// (bus_id, arrival time) log, in arrival order.
    pub arrivals: Vec<(u32, f64)>,
}

/// The calibrated/assimilated parameter vector: per-stop arrival rates
/// (passengers per second), per-stop departure rates (fraction alighting,
/// last stop pinned to 1), and the scalar traffic speed (m/s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arrival_rates: Vec<f64>,
    pub departure_rates: Vec<f64>,
    pub traffic_speed: f64,
}

impl ModelParams {
    /// Flat layout: [arr_1..arr_M, dep_1..dep_M, V], length 2M+1.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.arrival_rates);
        v.extend_from_slice(&self.departure_rates);
        v.push(self.traffic_speed);
        v
    }

    pub fn from_flat(flat: &[f64], num_stops: usize) -> Result<Self> {
        if flat.len() != 2 * num_stops + 1 {
            return Err(Error::Malformed(format!(
                "parameter vector length {} does not match 2*{}+1",
                flat.len(),
                num_stops
            )));
        }
        Ok(ModelParams {
            arrival_rates: flat[..num_stops].to_vec(),
            departure_rates: flat[num_stops..2 * num_stops].to_vec(),
            traffic_speed: flat[2 * num_stops],
        })
    }

    pub fn dim(&self) -> usize {
        self.arrival_rates.len() + self.departure_rates.len() + 1
    }

    pub fn num_stops(&self) -> usize {
        self.arrival_rates.len()
    }

    pub fn validate(&self, num_stops: usize) -> Result<()> {
        if self.arrival_rates.len() != num_stops || self.departure_rates.len() != num_stops {
            return Err(Error::Malformed(format!(
                "parameter vectors sized {}/{} for {num_stops} stops",
                self.arrival_rates.len(),
                self.departure_rates.len()
            )));
        }
        if self.arrival_rates.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::Malformed("negative arrival rate".into()));
        }
        if self
            .departure_rates
            .iter()
            .any(|&d| !(0.0..=1.0).contains(&d))
        {
            return Err(Error::Malformed("departure rate outside [0, 1]".into()));
        }
        match self.departure_rates.last() {
            Some(&last) if (last - 1.0).abs() < 1e-12 => {}
            _ => {
                return Err(Error::Malformed(
                    "departure rate at the last stop must be 1".into(),
                ))
            }
        }
        if !(self.traffic_speed > 0.0) {
            return Err(Error::Malformed("traffic speed must be positive".into()));
        }
        Ok(())
    }
}

/// Full Markovian state of one model instance: everything `step` needs to
/// continue a run, including the per-stop visit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    /// Simulation clock, seconds.
    pub clock: f64,
    pub buses: Vec<BusState>,
    pub stops: Vec<StopState>,
    /// Current (possibly drifted) model parameters.
    pub params: ModelParams,
}

impl StateVector {
    /// Pre-dispatch state at t = 0.
    pub fn fresh(cfg: &SimConfig, params: &ModelParams) -> Self {
        let buses = (0..cfg.fleet_size)
            .map(|j| BusState::fresh(j as u32, cfg))
            .collect();
        let stops = cfg
            .stop_positions()
            .into_iter()
            .enumerate()
            .map(|(m, position)| StopState {
                stop_id: m as u32,
                position,
                geofence_radius: cfg.geofence,
                last_visit_time: 0.0,
                arrivals: Vec::new(),
            })
            .collect();
        StateVector {
            clock: 0.0,
            buses,
            stops,
            params: params.clone(),
        }
    }

    /// Structural validation used when decoding untrusted state records.
    pub fn validate(&self) -> Result<()> {
        self.params.validate(self.stops.len())?;
        for bus in &self.buses {
            if bus.occupancy > bus.capacity {
                return Err(Error::Malformed(format!(
                    "bus {} occupancy {} exceeds capacity {}",
                    bus.bus_id, bus.occupancy, bus.capacity
                )));
            }
            if !(bus.speed >= 0.0) || !(bus.position >= 0.0) {
                return Err(Error::Malformed(format!(
                    "bus {} has negative speed or position",
                    bus.bus_id
                )));
            }
            if bus.visited_stops.len() > self.stops.len() {
                return Err(Error::Malformed(format!(
                    "bus {} visited more stops than exist",
                    bus.bus_id
                )));
            }
        }
        if !self.clock.is_finite() || self.clock < 0.0 {
            return Err(Error::Malformed("clock must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One bus's observable slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsRow {
    pub bus_id: u32,
    pub status: BusStatus,
    pub position: f64,
    pub speed: f64,
    pub occupancy: u32,
}

/// The observable sub-vector of a state: per-bus rows plus a timestamp.
/// Model parameters are deliberately absent (they are what the filter has
/// to infer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub rows: Vec<ObsRow>,
}

/// A recorded run: one row per bus per tick, in (tick, bus) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub fleet_size: usize,
    pub dt: f64,
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub bus_id: u32,
    pub status: BusStatus,
    pub position: f64,
    pub speed: f64,
    pub occupancy: u32,
}

impl Trajectory {
    pub fn num_ticks(&self) -> usize {
        self.rows.len().checked_div(self.fleet_size).unwrap_or(0)
    }

    fn idx(&self, tick: usize, bus: usize) -> usize {
        tick * self.fleet_size + bus
    }

    pub fn row(&self, tick: usize, bus: usize) -> &TrajectoryRow {
        &self.rows[self.idx(tick, bus)]
    }

    pub fn position(&self, tick: usize, bus: usize) -> f64 {
        self.rows[self.idx(tick, bus)].position
    }

    /// Observation vector at a recorded tick.
    pub fn observation_at(&self, tick: usize) -> Observation {
        let rows = (0..self.fleet_size)
            .map(|j| {
                let r = self.row(tick, j);
                ObsRow {
                    bus_id: r.bus_id,
                    status: r.status,
                    position: r.position,
                    speed: r.speed,
                    occupancy: r.occupancy,
                }
            })
            .collect();
        Observation {
            time: self.rows[self.idx(tick, 0)].time,
            rows,
        }
    }

    /// Structural validation used when decoding untrusted CSV input.
    pub fn validate(&self) -> Result<()> {
        if self.fleet_size == 0 {
            return Err(Error::Malformed("empty fleet".into()));
        }
        if !self.rows.len().is_multiple_of(self.fleet_size) {
            return Err(Error::Malformed(format!(
                "{} rows is not a multiple of fleet size {}",
                self.rows.len(),
                self.fleet_size
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.bus_id as usize != i % self.fleet_size {
                return Err(Error::Malformed(format!(
                    "row {i}: bus ids out of order (found {})",
                    row.bus_id
                )));
            }
            if !row.time.is_finite() || !row.position.is_finite() || !row.speed.is_finite() {
                return Err(Error::Malformed(format!("row {i}: non-finite value")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_round_trip() {
        for s in [
            BusStatus::Idle,
            BusStatus::Moving,
            BusStatus::Dwelling,
            BusStatus::Finished,
        ] {
            assert_eq!(BusStatus::parse(s.as_str()).unwrap(), s);
        }
        assert_eq!(BusStatus::Idle.code(), 0);
        assert!(BusStatus::parse("PARKED").is_err());
    }

    #[test]
    fn params_flatten_round_trip() {
        let p = ModelParams {
            arrival_rates: vec![0.01, 0.02, 0.03],
            departure_rates: vec![0.1, 0.4, 1.0],
            traffic_speed: 14.0,
        };
        let flat = p.flatten();
        assert_eq!(flat.len(), 7);
        assert_eq!(ModelParams::from_flat(&flat, 3).unwrap(), p);
        assert!(ModelParams::from_flat(&flat, 4).is_err());
    }

    #[test]
    fn params_validation_pins_last_departure_rate() {
        let mut p = ModelParams {
            arrival_rates: vec![0.01, 0.02],
            departure_rates: vec![0.3, 0.9],
            traffic_speed: 14.0,
        };
        assert!(p.validate(2).is_err());
        p.departure_rates[1] = 1.0;
        p.validate(2).unwrap();
    }

    #[test]
    fn fresh_state_is_pre_dispatch() {
        let cfg = SimConfig::default();
        let params = ModelParams {
            arrival_rates: vec![0.01; cfg.num_stops],
            departure_rates: {
                let mut d = vec![0.2; cfg.num_stops];
                *d.last_mut().unwrap() = 1.0;
                d
            },
            traffic_speed: cfg.initial_traffic_speed,
        };
        let state = StateVector::fresh(&cfg, &params);
        assert_eq!(state.buses.len(), cfg.fleet_size);
        assert_eq!(state.stops.len(), cfg.num_stops);
        assert!(state.buses.iter().all(|b| b.status == BusStatus::Idle));
        assert_close(state.stops[3].position, 3.0 * cfg.stop_spacing);
        state.validate().unwrap();
    }

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} != {b}");
    }
}
