//! Particle filter over a calibrated model.
//!
//! The ensemble is pushed forward with the model between observations, then
//! reweighted against the observed bus positions, resampled systematically
//! and roughened: Gaussian noise is added to each particle's parameter
//! vector only, never to the bus sub-state, so the ensemble can track
//! parameters that drift in the underlying system.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::ParamBounds;
use crate::error::{Error, Result};
use crate::io::FilterFileConfig;
use crate::rng::{self, label};
use crate::sim::{step, ModelParams, Observation, SimConfig, StateVector, Trajectory, Variant};

/// Runtime filter settings. `diversify_std` is the per-dimension roughening
/// noise over the flat parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub particles: usize,
    /// Gaussian likelihood width on positions, metres.
    pub obs_noise: f64,
    /// Seconds between assimilated observations (multiple of dt).
    pub interval: f64,
    pub diversify_std: Vec<f64>,
    /// Variant the particles run under (a simpler model, never truth).
    pub variant: Variant,
    /// Resample when N_eff < threshold x particles; 0 resamples every step.
    pub neff_threshold: f64,
    /// Emit a free-running forecast to the horizon every this many seconds;
    /// 0 disables forecasting.
    pub forecast_interval: f64,
}

impl FilterConfig {
    pub fn from_file(
        file: &FilterFileConfig,
        variant: Variant,
        bounds: &ParamBounds,
        sim: &SimConfig,
    ) -> Result<Self> {
        file.validate(sim)?;
        if variant == Variant::Truth {
            return Err(Error::invalid_config(
                "calibration.model_variant",
                "particles must run a simpler variant (stochastic or deterministic)",
            ));
        }
        let diversify_std = (0..bounds.dim())
            .map(|j| file.diversify_frac * bounds.range(j))
            .collect();
        Ok(FilterConfig {
            particles: file.particles,
            obs_noise: file.obs_noise_m,
            interval: file.interval_s,
            diversify_std,
            variant,
            neff_threshold: file.neff_threshold,
            forecast_interval: file.forecast_interval_s,
        })
    }
}

/// One state hypothesis and its normalized weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub state: StateVector,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn clock(&self) -> f64 {
        self.particles[0].state.clock
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Effective sample size, 1/sum(w^2); in [1, N] for normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self
            .particles
            .iter()
            .map(|p| p.weight * p.weight)
            .sum::<f64>()
    }

    fn set_uniform_weights(&mut self) {
        let w = 1.0 / self.len() as f64;
        for p in &mut self.particles {
            p.weight = w;
        }
    }
}

/// Positions over consecutive ticks for a whole fleet; tick i holds time
/// (i+1) * dt, matching recorded trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionSeries {
    pub fleet_size: usize,
    pub dt: f64,
    pub positions: Vec<f64>,
}

impl PositionSeries {
    pub fn num_ticks(&self) -> usize {
        self.positions.len().checked_div(self.fleet_size).unwrap_or(0)
    }

    pub fn position(&self, tick: usize, bus: usize) -> f64 {
        self.positions[tick * self.fleet_size + bus]
    }
}

/// Initialize the ensemble at t = 0 around a parameter vector: each particle
/// gets the vector plus roughening noise (clamped to bounds), uniform weight.
pub fn init_particles(
    params_star: &ModelParams,
    sim: &SimConfig,
    fc: &FilterConfig,
    bounds: &ParamBounds,
    seed: u64,
) -> ParticleSet {
    let weight = 1.0 / fc.particles as f64;
    let particles = (0..fc.particles)
        .map(|i| {
            let mut rng = rng::stream(seed, &[label::FILTER, 0, i as u64]);
            let params = perturb_params(params_star, &fc.diversify_std, bounds, &mut rng);
            Particle {
                state: StateVector::fresh(sim, &params),
                weight,
            }
        })
        .collect();
    ParticleSet { particles }
}

fn perturb_params(
    params: &ModelParams,
    std: &[f64],
    bounds: &ParamBounds,
    rng: &mut impl Rng,
) -> ModelParams {
    let mut flat = params.flatten();
    for (j, v) in flat.iter_mut().enumerate() {
        if std[j] > 0.0 {
            *v += Normal::new(0.0, std[j]).expect("finite std").sample(rng);
        }
    }
    bounds.clamp(&mut flat);
    ModelParams::from_flat(&flat, params.num_stops()).expect("layout preserved")
}

/// Step every particle forward to `until` with its own stream; weights are
/// untouched. Returns the ensemble-weighted mean positions for each new tick
/// (the prediction made before the next observation arrives).
pub fn predict(
    set: &mut ParticleSet,
    sim: &SimConfig,
    until: f64,
    seed: u64,
    round: u64,
) -> Vec<Vec<f64>> {
    let clock = set.clock();
    let ticks = ((until - clock) / sim.dt).round() as usize;
    if ticks == 0 {
        return Vec::new();
    }
    let fleet = sim.fleet_size;
    let weights: Vec<f64> = set.particles.iter().map(|p| p.weight).collect();

    // Per-particle trajectories for the interval, in particle order.
    let chunks: Vec<Vec<f64>> = set
        .particles
        .par_iter_mut()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = rng::stream(seed, &[label::FILTER, 1, round, i as u64]);
            let mut positions = Vec::with_capacity(ticks * fleet);
            let base = p.state.params.clone();
            for _ in 0..ticks {
                step(&mut p.state, sim, &base, &mut rng);
                positions.extend(p.state.buses.iter().map(|b| b.position));
            }
            positions
        })
        .collect();

    let mut means = vec![vec![0.0; fleet]; ticks];
    for (i, chunk) in chunks.iter().enumerate() {
        let w = weights[i];
        for t in 0..ticks {
            for j in 0..fleet {
                means[t][j] += w * chunk[t * fleet + j];
            }
        }
    }
    means
}

/// Outcome of one weighting pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSummary {
    pub n_eff: f64,
    /// All likelihoods underflowed; weights fell back to uniform.
    pub degenerate: bool,
    /// Buses that contributed to the likelihood.
    pub active_buses: usize,
}

/// Multiply weights by the Gaussian position likelihood of the observation
/// and renormalize. Buses idle or finished in the observation are excluded.
pub fn weight(set: &mut ParticleSet, obs: &Observation, obs_noise: f64) -> Result<WeightSummary> {
    let clock = set.clock();
    if (obs.time - clock).abs() > 1e-9 {
        return Err(Error::DatasetMismatch(format!(
            "observation at t = {} but particles at t = {clock}",
            obs.time
        )));
    }
    let active: Vec<usize> = obs
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.status.is_active())
        .map(|(j, _)| j)
        .collect();
    if active.is_empty() {
        return Ok(WeightSummary {
            n_eff: set.effective_sample_size(),
            degenerate: false,
            active_buses: 0,
        });
    }

    let inv_two_var = 1.0 / (2.0 * obs_noise * obs_noise);
    let log_lik: Vec<f64> = set
        .particles
        .iter()
        .map(|p| {
            -active
                .iter()
                .map(|&j| {
                    let err = p.state.buses[j].position - obs.rows[j].position;
                    err * err
                })
                .sum::<f64>()
                * inv_two_var
        })
        .collect();

    let max_log = log_lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut degenerate = false;
    if !max_log.is_finite() {
        degenerate = true;
        set.set_uniform_weights();
    } else {
        let mut total = 0.0;
        for (p, &ll) in set.particles.iter_mut().zip(&log_lik) {
            p.weight *= (ll - max_log).exp();
            total += p.weight;
        }
        if total <= 0.0 || !total.is_finite() {
            degenerate = true;
            set.set_uniform_weights();
        } else {
            // floor, then renormalize so every weight stays non-zero
            let mut floored = 0.0;
            for p in &mut set.particles {
                p.weight = (p.weight / total).max(1e-300);
                floored += p.weight;
            }
            for p in &mut set.particles {
                p.weight /= floored;
            }
        }
    }

    Ok(WeightSummary {
        n_eff: set.effective_sample_size(),
        degenerate,
        active_buses: active.len(),
    })
}

/// Systematic resampling back to a full ensemble with uniform weights.
/// The expected copy count of particle i is N * w_i.
pub fn resample(set: &mut ParticleSet, rng: &mut impl Rng) {
    let n = set.len();
    let step_size = 1.0 / n as f64;
    let start: f64 = rng.random::<f64>() * step_size;

    let mut copies = vec![0usize; n];
    let mut cumulative = 0.0;
    let mut i = 0;
    for k in 0..n {
        let u = start + k as f64 * step_size;
        while cumulative + set.particles[i].weight < u && i < n - 1 {
            cumulative += set.particles[i].weight;
            i += 1;
        }
        copies[i] += 1;
    }

    let uniform = 1.0 / n as f64;
    let mut next = Vec::with_capacity(n);
    for (i, &count) in copies.iter().enumerate() {
        for _ in 0..count {
            next.push(Particle {
                state: set.particles[i].state.clone(),
                weight: uniform,
            });
        }
    }
    set.particles = next;
}

/// Roughen the parameter sub-vector of every particle. The bus sub-state is
/// untouched; parameters stay inside the calibration bounds (and the pinned
/// last departure rate stays pinned through its degenerate bounds).
pub fn diversify(
    set: &mut ParticleSet,
    std: &[f64],
    bounds: &ParamBounds,
    seed: u64,
    round: u64,
) {
    if std.iter().all(|&s| s <= 0.0) {
        return;
    }
    set.particles.par_iter_mut().enumerate().for_each(|(i, p)| {
        let mut rng = rng::stream(seed, &[label::FILTER, 2, round, i as u64]);
        p.state.params = perturb_params(&p.state.params, std, bounds, &mut rng);
    });
}

/// Weighted ensemble summary: mean positions/speeds/occupancies/parameters,
/// per-bus status by weighted majority. Stop logs are taken from the
/// highest-weight particle (averaging visit logs is meaningless).
pub fn estimate_state(set: &ParticleSet) -> StateVector {
    let heaviest = set
        .particles
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.weight
                .partial_cmp(&b.weight)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(_, p)| p)
        .expect("non-empty ensemble");
    let mut estimate = heaviest.state.clone();

    let fleet = estimate.buses.len();
    let dim = estimate.params.dim();
    let mut positions = vec![0.0; fleet];
    let mut speeds = vec![0.0; fleet];
    let mut occupancies = vec![0.0; fleet];
    let mut params = vec![0.0; dim];
    // status -> accumulated weight, per bus
    let mut status_weight = vec![[0.0f64; 4]; fleet];

    for p in &set.particles {
        let w = p.weight;
        for (j, b) in p.state.buses.iter().enumerate() {
            positions[j] += w * b.position;
            speeds[j] += w * b.speed;
            occupancies[j] += w * b.occupancy as f64;
            status_weight[j][b.status.code() as usize] += w;
        }
        for (v, x) in params.iter_mut().zip(p.state.params.flatten()) {
            *v += w * x;
        }
    }

    for (j, bus) in estimate.buses.iter_mut().enumerate() {
        bus.position = positions[j];
        bus.speed = speeds[j];
        bus.occupancy = occupancies[j].round() as u32;
        let majority = status_weight[j]
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.partial_cmp(b)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(ib.cmp(ia))
            })
            .map(|(code, _)| code)
            .expect("four statuses");
        bus.status = match majority {
            0 => crate::sim::BusStatus::Idle,
            1 => crate::sim::BusStatus::Moving,
            2 => crate::sim::BusStatus::Dwelling,
            _ => crate::sim::BusStatus::Finished,
        };
    }
    estimate.params =
        ModelParams::from_flat(&params, estimate.params.num_stops()).expect("layout preserved");
    estimate
}

/// A free-running forecast issued at an assimilation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub issued_at: f64,
    /// Mean positions for ticks after `issued_at` through the horizon.
    pub series: PositionSeries,
}

/// Everything a filter run produces.
#[derive(Clone, Debug)]
pub struct FilterRun {
    /// Stitched pre-observation predictions for every tick of the run.
    pub predictions: PositionSeries,
    /// Posterior summary state at each assimilation time.
    pub estimates: Vec<(f64, StateVector)>,
    /// (time, N_eff) after each weighting pass.
    pub n_eff: Vec<(f64, f64)>,
    /// Assimilation times where the likelihood underflowed.
    pub degenerate_times: Vec<f64>,
    pub forecasts: Vec<Forecast>,
}

/// Run the filter over a real-time trajectory: predict to each observation
/// time, weight, record the posterior, optionally forecast, resample and
/// roughen. Gaps in the observations are simply predicted across.
pub fn run_filter(
    sim: &SimConfig,
    fc: &FilterConfig,
    initial_params: &ModelParams,
    bounds: &ParamBounds,
    realtime: &Trajectory,
    seed: u64,
) -> Result<FilterRun> {
    if realtime.fleet_size != sim.fleet_size {
        return Err(Error::DatasetMismatch(format!(
            "real-time data has {} buses, model has {}",
            realtime.fleet_size, sim.fleet_size
        )));
    }
    if realtime.num_ticks() < sim.num_steps() {
        return Err(Error::DatasetMismatch(format!(
            "real-time data covers {} ticks, model horizon needs {}",
            realtime.num_ticks(),
            sim.num_steps()
        )));
    }
    let companion = SimConfig {
        variant: fc.variant,
        ..sim.clone()
    };

    let mut set = init_particles(initial_params, &companion, fc, bounds, seed);
    let fleet = companion.fleet_size;
    let total_ticks = companion.num_steps();
    let obs_every = (fc.interval / companion.dt).round() as usize;

    let mut predictions = Vec::with_capacity(total_ticks * fleet);
    let mut estimates = Vec::new();
    let mut n_eff_log = Vec::new();
    let mut degenerate_times = Vec::new();
    let mut forecasts = Vec::new();
    let mut last_obs_time = f64::NEG_INFINITY;

    let mut round: u64 = 0;
    let mut tick = 0usize;
    while tick < total_ticks {
        let next_tick = (tick + obs_every).min(total_ticks);
        let until = next_tick as f64 * companion.dt;
        let means = predict(&mut set, &companion, until, seed, round);
        for tick_means in &means {
            predictions.extend_from_slice(tick_means);
        }
        tick = next_tick;

        if tick < total_ticks || tick.is_multiple_of(obs_every) {
            let obs = realtime.observation_at(tick - 1);
            if obs.time <= last_obs_time {
                return Err(Error::TimestampRegression {
                    previous: last_obs_time,
                    current: obs.time,
                });
            }
            last_obs_time = obs.time;

            let summary = weight(&mut set, &obs, fc.obs_noise)?;
            n_eff_log.push((obs.time, summary.n_eff));
            if summary.degenerate {
                degenerate_times.push(obs.time);
            }
            estimates.push((obs.time, estimate_state(&set)));

            if fc.forecast_interval > 0.0
                && (obs.time / fc.forecast_interval).fract().abs() < 1e-9
                && tick < total_ticks
            {
                forecasts.push(forecast_to_horizon(&set, &companion, obs.time, seed, round));
            }

            if summary.active_buses > 0 {
                let should_resample = fc.neff_threshold <= 0.0
                    || summary.n_eff < fc.neff_threshold * set.len() as f64;
                if should_resample {
                    let mut rng = rng::stream(seed, &[label::FILTER, 3, round]);
                    resample(&mut set, &mut rng);
                }
                diversify(&mut set, &fc.diversify_std, bounds, seed, round);
            }
        }
        round += 1;
    }

    Ok(FilterRun {
        predictions: PositionSeries {
            fleet_size: fleet,
            dt: companion.dt,
            positions: predictions,
        },
        estimates,
        n_eff: n_eff_log,
        degenerate_times,
        forecasts,
    })
}

/// Free-run a copy of the ensemble (no further assimilation) to the horizon
/// and return the mean positions.
fn forecast_to_horizon(
    set: &ParticleSet,
    sim: &SimConfig,
    issued_at: f64,
    seed: u64,
    round: u64,
) -> Forecast {
    let mut copy = set.clone();
    let means = predict(&mut copy, sim, sim.horizon, seed, u64::MAX - round);
    let fleet = sim.fleet_size;
    let mut positions = Vec::with_capacity(means.len() * fleet);
    for tick_means in &means {
        positions.extend_from_slice(tick_means);
    }
    Forecast {
        issued_at,
        series: PositionSeries {
            fleet_size: fleet,
            dt: sim.dt,
            positions,
        },
    }
}

/// Assimilation log CSV: time, per-bus posterior position estimates, the
/// observed positions, the effective sample size, and the posterior
/// parameter means.
pub fn write_filter_log<W: std::io::Write>(
    run: &FilterRun,
    realtime: &Trajectory,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fleet = realtime.fleet_size;
    let mut header = vec!["t_s".to_string()];
    for j in 0..fleet {
        header.push(format!("pos_est_{j}"));
    }
    for j in 0..fleet {
        header.push(format!("pos_obs_{j}"));
    }
    header.push("n_eff".into());
    let num_stops = run
        .estimates
        .first()
        .map(|(_, s)| s.params.num_stops())
        .unwrap_or(0);
    for m in 0..num_stops {
        header.push(format!("arr_{}", m + 1));
    }
    for m in 0..num_stops {
        header.push(format!("dep_{}", m + 1));
    }
    header.push("traffic_speed".into());
    w.write_record(&header)?;

    for ((time, estimate), (_, n_eff)) in run.estimates.iter().zip(&run.n_eff) {
        let tick = (time / realtime.dt).round() as usize - 1;
        let mut record = vec![time.to_string()];
        for bus in &estimate.buses {
            record.push(bus.position.to_string());
        }
        for j in 0..fleet {
            record.push(realtime.position(tick, j).to_string());
        }
        record.push(n_eff.to_string());
        for v in estimate.params.flatten() {
            record.push(v.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// One forecast CSV: positions of the free-running ensemble mean from the
/// issue time to the horizon.
pub fn write_forecast<W: std::io::Write>(forecast: &Forecast, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_s", "bus_id", "position_m"])?;
    let series = &forecast.series;
    for tick in 0..series.num_ticks() {
        let time = forecast.issued_at + (tick as f64 + 1.0) * series.dt;
        for j in 0..series.fleet_size {
            w.write_record(&[
                time.to_string(),
                j.to_string(),
                series.position(tick, j).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
