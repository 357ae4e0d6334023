//! The bus-route engine: state types, configuration and the tick update.

mod config;
mod engine;
mod state;

pub use config::{SimConfig, Variant};
pub use engine::{
    alighting_count, apply_capacity, apply_dynamics, boarding_count, dwell_time,
    extract_observation, in_geofence, run, run_with, step, update_motion,
};
pub use state::{
    BusState, BusStatus, ModelParams, Observation, ObsRow, StateVector, StopState, Trajectory,
    TrajectoryRow,
};
