//! Ground-truth scenarios and synthetic GPS datasets.
//!
//! A scenario pins the parameter vector at t = 0 plus the seeds for every
//! run. The historical dataset is several runs of the generating model with
//! the same parameters (different seeds); the real-time dataset is one more
//! run, held out for assimilation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fingerprint_json;
use crate::rng::{self, label};
use crate::sim::{run, BusStatus, ModelParams, SimConfig, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScenario {
    /// Parameters at t = 0 (the generating model drifts them if configured).
    pub params0: ModelParams,
    pub sim_config: SimConfig,
    pub historical_seeds: Vec<u64>,
    pub realtime_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Historical,
    Realtime,
}

/// A generated dataset plus the fingerprint of the scenario that made it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub runs: Vec<Trajectory>,
    pub fingerprint: String,
}

impl GroundTruthScenario {
    /// Sample a scenario: parameters from the configured demand bounds,
    /// seeds derived from the master seed.
    pub fn sample(sim_config: SimConfig, historical_runs: usize, master_seed: u64) -> Result<Self> {
        sim_config.validate()?;
        let mut param_rng = rng::stream(master_seed, &[label::DATAGEN, 0]);
        let params0 = sample_params(
            sim_config.min_demand,
            sim_config.max_demand,
            sim_config.num_stops,
            sim_config.initial_traffic_speed,
            &mut param_rng,
        )?;
        let historical_seeds = (0..historical_runs)
            .map(|k| rng::derive_chain(master_seed, &[label::DATAGEN, 1, k as u64]))
            .collect();
        let realtime_seed = rng::derive_chain(master_seed, &[label::DATAGEN, 2]);
        let scenario = GroundTruthScenario {
            params0,
            sim_config,
            historical_seeds,
            realtime_seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        self.params0.validate(self.sim_config.num_stops)?;
        let mut seeds = self.historical_seeds.clone();
        seeds.push(self.realtime_seed);
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.historical_seeds.len() + 1 {
            return Err(Error::Malformed("scenario seeds must be distinct".into()));
        }
        Ok(())
    }

    /// Hash of config + parameters + seeds; shared by the historical and
    /// real-time datasets of the same scenario.
    pub fn fingerprint(&self) -> String {
        fingerprint_json(self)
    }
}

/// Draw a parameter vector: arrival rates uniform in the demand bounds
/// (given per minute, stored per second), departure rates uniform in
/// [0.05, 0.5] sorted non-decreasingly with the last stop pinned to 1,
/// traffic speed at the configured initial value.
pub fn sample_params(
    min_demand_per_min: f64,
    max_demand_per_min: f64,
    num_stops: usize,
    initial_speed: f64,
    rng: &mut impl Rng,
) -> Result<ModelParams> {
    if !(min_demand_per_min > 0.0 && min_demand_per_min <= max_demand_per_min) {
        return Err(Error::invalid_config(
            "sim.min_demand_per_min",
            "demand bounds must satisfy 0 < min <= max",
        ));
    }
    if num_stops < 2 {
        return Err(Error::invalid_config("sim.num_stops", "at least two stops required"));
    }
    fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }
    let arrival_rates = (0..num_stops)
        .map(|_| uniform(rng, min_demand_per_min, max_demand_per_min) / 60.0)
        .collect();
    let mut departure_rates: Vec<f64> = (0..num_stops)
        .map(|_| uniform(rng, 0.05, 0.5))
        .collect();
    departure_rates.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    *departure_rates.last_mut().expect("at least two stops") = 1.0;
    Ok(ModelParams {
        arrival_rates,
        departure_rates,
        traffic_speed: initial_speed,
    })
}

/// Generate the historical dataset: one run per historical seed, identical
/// parameters throughout.
pub fn generate_historical(scenario: &GroundTruthScenario, gps_noise_std: f64) -> Result<Dataset> {
    if scenario.historical_seeds.len() < 2 {
        return Err(Error::invalid_config(
            "datagen.historical_runs",
            "at least two historical runs required",
        ));
    }
    scenario.validate()?;
    let runs = scenario
        .historical_seeds
        .iter()
        .map(|&seed| generate_run(scenario, seed, gps_noise_std))
        .collect();
    Ok(Dataset {
        kind: DatasetKind::Historical,
        runs,
        fingerprint: scenario.fingerprint(),
    })
}

/// Generate the real-time dataset: a single held-out run.
pub fn generate_realtime(scenario: &GroundTruthScenario, gps_noise_std: f64) -> Result<Dataset> {
    scenario.validate()?;
    let run = generate_run(scenario, scenario.realtime_seed, gps_noise_std);
    Ok(Dataset {
        kind: DatasetKind::Realtime,
        runs: vec![run],
        fingerprint: scenario.fingerprint(),
    })
}

fn generate_run(scenario: &GroundTruthScenario, seed: u64, gps_noise_std: f64) -> Trajectory {
    let mut traj = run(&scenario.sim_config, &scenario.params0, seed);
    if gps_noise_std > 0.0 {
        let mut noise_rng = rng::stream(seed, &[label::DATAGEN, 3]);
        let normal = Normal::new(0.0, gps_noise_std).expect("positive std");
        for row in &mut traj.rows {
            if row.status.is_active() {
                row.position += normal.sample(&mut noise_rng);
            }
        }
    }
    traj
}

/// Completion time of a run: the first tick at which every bus is FINISHED,
/// or the horizon if the route is never completed.
pub fn completion_time(traj: &Trajectory) -> f64 {
    let fleet = traj.fleet_size;
    for tick in 0..traj.num_ticks() {
        if (0..fleet).all(|j| traj.row(tick, j).status == BusStatus::Finished) {
            return traj.row(tick, 0).time;
        }
    }
    traj.num_ticks() as f64 * traj.dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Variant;

    fn base_cfg() -> SimConfig {
        SimConfig {
            variant: Variant::Truth,
            fleet_size: 3,
            num_stops: 5,
            stop_spacing: 1000.0,
            horizon: 1800.0,
            headway: 300.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn degenerate_bounds_give_constant_arrival_rates() {
        let mut rng = rng::stream(1, &[]);
        let p = sample_params(0.5, 0.5, 6, 14.0, &mut rng).unwrap();
        for &a in &p.arrival_rates {
            assert!((a - 0.5 / 60.0).abs() < 1e-15);
        }
    }

    #[test]
    fn departure_rates_sorted_with_pinned_last() {
        let mut rng = rng::stream(2, &[]);
        for _ in 0..50 {
            let p = sample_params(0.5, 2.0, 8, 14.0, &mut rng).unwrap();
            let d = &p.departure_rates;
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*d.last().unwrap(), 1.0);
            assert!(d[..d.len() - 1].iter().all(|&x| (0.05..=0.5).contains(&x)));
        }
    }

    #[test]
    fn arrival_rate_sample_mean_matches_uniform_mean() {
        // bounds [0.5, 2]/min: mean 1.25, 1e4 draws, 3 standard errors
        let mut rng = rng::stream(3, &[]);
        let n = 10_000;
        let mut total = 0.0;
        let mut count = 0usize;
        while count < n {
            let p = sample_params(0.5, 2.0, 2, 14.0, &mut rng).unwrap();
            total += p.arrival_rates[0] * 60.0;
            count += 1;
        }
        let mean = total / n as f64;
        let se = (1.5f64.powi(2) / 12.0 / n as f64).sqrt();
        assert!((mean - 1.25).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn invalid_bounds_rejected() {
        let mut rng = rng::stream(4, &[]);
        assert!(sample_params(2.0, 0.5, 5, 14.0, &mut rng).is_err());
        assert!(sample_params(0.0, 0.5, 5, 14.0, &mut rng).is_err());
    }

    #[test]
    fn collapse_config_yields_identical_runs() {
        let cfg = SimConfig {
            min_demand: 0.5,
            max_demand: 0.5,
            dynamic_rate: 0.0,
            ..base_cfg()
        };
        let scenario = GroundTruthScenario::sample(cfg, 2, 7).unwrap();
        let data = generate_historical(&scenario, 0.0).unwrap();
        assert_eq!(data.runs[0], data.runs[1]);
        let rt = generate_realtime(&scenario, 0.0).unwrap();
        assert_eq!(rt.runs[0], data.runs[0]);
    }

    #[test]
    fn stochastic_runs_differ_pairwise() {
        let cfg = SimConfig {
            max_demand: 2.0,
            ..base_cfg()
        };
        let scenario = GroundTruthScenario::sample(cfg, 10, 8).unwrap();
        let data = generate_historical(&scenario, 0.0).unwrap();
        for a in 0..data.runs.len() {
            for b in (a + 1)..data.runs.len() {
                assert_ne!(data.runs[a], data.runs[b], "runs {a} and {b} identical");
            }
        }
        let rt = generate_realtime(&scenario, 0.0).unwrap();
        assert!(data.runs.iter().all(|r| *r != rt.runs[0]));
        assert_eq!(rt.fingerprint, data.fingerprint);
    }

    #[test]
    fn row_count_bookkeeping() {
        let cfg = base_cfg();
        let k_o = 4;
        let scenario = GroundTruthScenario::sample(cfg.clone(), k_o, 9).unwrap();
        let data = generate_historical(&scenario, 0.0).unwrap();
        let per_run = cfg.fleet_size * cfg.num_steps();
        let total: usize = data.runs.iter().map(|r| r.rows.len()).sum();
        assert_eq!(total, k_o * per_run);
    }

    #[test]
    fn identical_scenarios_reproduce_bit_identical_datasets() {
        let scenario = GroundTruthScenario::sample(base_cfg(), 3, 10).unwrap();
        let a = generate_historical(&scenario, 0.0).unwrap();
        let b = generate_historical(&scenario, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spread_of_completion_times_grows_with_demand() {
        // paired sign test over 10 scenario draws
        let spread = |max_demand: f64, seed: u64| -> f64 {
            let cfg = SimConfig {
                max_demand,
                ..base_cfg()
            };
            let scenario = GroundTruthScenario::sample(cfg, 5, seed).unwrap();
            let data = generate_historical(&scenario, 0.0).unwrap();
            let times: Vec<f64> = data.runs.iter().map(completion_time).collect();
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64
        };
        let wins = (0..10)
            .filter(|&s| spread(3.0, 100 + s) >= spread(1.0, 100 + s))
            .count();
        assert!(wins >= 8, "only {wins}/10 seeds show wider spread at higher demand");
    }
}
