//! Cross-entropy calibration of the simpler model variants.
//!
//! The optimizer maintains an independent Normal per parameter dimension,
//! draws a population, keeps the lowest-objective fraction as elites, refits
//! mean and sigma to them and blends with the previous values. Out-of-bound
//! draws are clamped, which also pins dimensions whose bounds are degenerate
//! (the last stop's departure rate is fixed at 1 this way).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::io::CalibrationConfig;
use crate::rng::{self, label};
use crate::sim::{run_with, ModelParams, SimConfig, Trajectory};

/// Box constraints over the flat parameter layout [arr_1..arr_M, dep_1..dep_M, V].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Infeasible("bound vectors must have equal, non-zero length".into()));
        }
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::Infeasible(format!("bounds for dimension {i} are invalid ({l}..{h})")));
            }
        }
        Ok(ParamBounds { lo, hi })
    }

    /// Search box for a route: arrival rates in [0, arr_hi] (per second),
    /// departure rates in the configured range with the last stop pinned,
    /// traffic speed in its configured range.
    pub fn from_config(sim: &SimConfig, cal: &CalibrationConfig) -> Self {
        let stops = sim.num_stops;
        let arr_hi = cal.max_arr_bound_per_min.unwrap_or(1.25 * sim.max_demand) / 60.0;
        let [dep_lo, dep_hi] = cal.dep_bounds;
        let [v_lo, v_hi] = cal.speed_bounds_mps.unwrap_or([
            0.5 * sim.initial_traffic_speed,
            1.5 * sim.initial_traffic_speed,
        ]);
        let mut lo = vec![0.0; stops];
        let mut hi = vec![arr_hi; stops];
        lo.extend(std::iter::repeat_n(dep_lo, stops - 1));
        hi.extend(std::iter::repeat_n(dep_hi, stops - 1));
        lo.push(1.0); // departure rate at the last stop
        hi.push(1.0);
        lo.push(v_lo);
        hi.push(v_hi);
        ParamBounds { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn range(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// Optimizer settings (the model-evaluation replication count lives with the
/// objective, not here).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemOptions {
    pub population: usize,
    pub iterations: usize,
    pub elite_ratio: f64,
    pub smoothing: f64,
    pub sigma_tol_frac: f64,
}

impl CemOptions {
    fn from_config(cal: &CalibrationConfig) -> Self {
        CemOptions {
            population: cal.population,
            iterations: cal.iterations,
            elite_ratio: cal.elite_ratio,
            smoothing: cal.smoothing,
            sigma_tol_frac: cal.sigma_tol_frac,
        }
    }
}

/// Sampling-distribution state after an optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub iterations_run: usize,
    pub best: Vec<f64>,
    pub best_pi: f64,
}

/// One row of the optimization trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemIteration {
    pub iteration: usize,
    /// Best objective seen so far (non-increasing).
    pub best_pi: f64,
    /// Best objective within this iteration's population.
    pub iter_best_pi: f64,
    pub mean_pi: f64,
    /// max_j sigma_j / range_j over non-pinned dimensions.
    pub max_sigma_frac: f64,
}

/// Minimize `eval` over the box with the cross-entropy method.
///
/// `eval` receives the candidate vector and a dedicated generator derived
/// from (seed, iteration, candidate index); evaluations are parallel and the
/// result does not depend on scheduling.
pub fn cem_optimize<F>(
    bounds: &ParamBounds,
    opts: &CemOptions,
    seed: u64,
    eval: F,
) -> Result<(CemState, Vec<CemIteration>)>
where
    F: Fn(&[f64], &mut ChaCha8Rng) -> f64 + Sync,
{
    if !(opts.elite_ratio > 0.0 && opts.elite_ratio <= 1.0) {
        return Err(Error::Infeasible("elite ratio must lie in (0,1]".into()));
    }
    let dim = bounds.dim();
    let pop = opts.population;
    let elites = ((opts.elite_ratio * pop as f64).ceil() as usize).clamp(1, pop);

    let mut mu = bounds.midpoint();
    let mut sigma: Vec<f64> = (0..dim).map(|j| bounds.range(j) / 4.0).collect();
    let mut best = mu.clone();
    let mut best_pi = f64::INFINITY;
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut iterations_run = 0;

    let mut draw_rng = rng::stream(seed, &[label::CALIBRATION, 0]);
    for iter in 0..opts.iterations {
        iterations_run = iter + 1;

        // Draw the population (sequential: keeps the draw order stable).
        let mut candidates = Vec::with_capacity(pop);
        for _ in 0..pop {
            let mut x = vec![0.0; dim];
            for j in 0..dim {
                x[j] = if sigma[j] > 0.0 {
                    Normal::new(mu[j], sigma[j])
                        .expect("finite sigma")
                        .sample(&mut draw_rng)
                } else {
                    mu[j]
                };
            }
            bounds.clamp(&mut x);
            candidates.push(x);
        }

        // Evaluate in parallel with per-candidate streams.
        let scores: Vec<f64> = candidates
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = rng::stream(seed, &[label::CALIBRATION, 1, iter as u64, i as u64]);
                eval(x, &mut rng)
            })
            .collect();

        if scores.iter().all(|s| !s.is_finite()) {
            return Err(Error::Infeasible(
                "no candidate produced a finite objective value".into(),
            ));
        }

        // Sort ascending by objective, ties broken by candidate index.
        let mut order: Vec<usize> = (0..pop).collect();
        order.sort_by(|&a, &b| {
            scores[a]
                .partial_cmp(&scores[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let iter_best = order[0];
        if scores[iter_best] < best_pi {
            best_pi = scores[iter_best];
            best = candidates[iter_best].clone();
        }

        // Refit mean and sigma to the elites, then blend.
        let elite_idx = &order[..elites];
        let mut mu_fit = vec![0.0; dim];
        for &i in elite_idx {
            for j in 0..dim {
                mu_fit[j] += candidates[i][j];
            }
        }
        for m in &mut mu_fit {
            *m /= elites as f64;
        }
        let mut sigma_fit = vec![0.0; dim];
        for &i in elite_idx {
            for j in 0..dim {
                sigma_fit[j] += (candidates[i][j] - mu_fit[j]).powi(2);
            }
        }
        for s in &mut sigma_fit {
            *s = (*s / elites as f64).sqrt();
        }
        for j in 0..dim {
            mu[j] = opts.smoothing * mu_fit[j] + (1.0 - opts.smoothing) * mu[j];
            sigma[j] = opts.smoothing * sigma_fit[j] + (1.0 - opts.smoothing) * sigma[j];
        }

        let mean_pi = scores.iter().filter(|s| s.is_finite()).sum::<f64>()
            / scores.iter().filter(|s| s.is_finite()).count() as f64;
        let max_sigma_frac = (0..dim)
            .filter(|&j| bounds.range(j) > 0.0)
            .map(|j| sigma[j] / bounds.range(j))
            .fold(0.0f64, f64::max);
        trace.push(CemIteration {
            iteration: iter,
            best_pi,
            iter_best_pi: scores[iter_best],
            mean_pi,
            max_sigma_frac,
        });

        if max_sigma_frac < opts.sigma_tol_frac {
            break;
        }
    }

    Ok((
        CemState {
            mu,
            sigma,
            iterations_run,
            best,
            best_pi,
        },
        trace,
    ))
}

/// Per-(tick, bus) mean and standard deviation of observed positions across
/// the historical runs, precomputed once per calibration.
#[derive(Clone, Debug)]
pub struct ObsStats {
    pub fleet_size: usize,
    pub ticks: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Reduce the historical runs to per-(tick, bus) statistics.
pub fn observed_stats(runs: &[Trajectory]) -> Result<ObsStats> {
    let first = runs
        .first()
        .ok_or_else(|| Error::DatasetMismatch("no observed runs".into()))?;
    let fleet_size = first.fleet_size;
    let ticks = first.num_ticks();
    if runs
        .iter()
        .any(|r| r.fleet_size != fleet_size || r.num_ticks() != ticks)
    {
        return Err(Error::DatasetMismatch(
            "observed runs disagree on fleet size or horizon".into(),
        ));
    }
    let cells = ticks * fleet_size;
    let k_o = runs.len() as f64;
    let mut mean = vec![0.0; cells];
    for r in runs {
        for (i, row) in r.rows.iter().enumerate() {
            mean[i] += row.position;
        }
    }
    for m in &mut mean {
        *m /= k_o;
    }
    let mut std = vec![0.0; cells];
    if runs.len() > 1 {
        for r in runs {
            for (i, row) in r.rows.iter().enumerate() {
                std[i] += (row.position - mean[i]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / (k_o - 1.0)).sqrt();
        }
    }
    Ok(ObsStats {
        fleet_size,
        ticks,
        mean,
        std,
    })
}

/// Calibration objective: mean over buses and ticks of the absolute gap in
/// mean position plus the absolute gap in position spread, simulated vs.
/// observed. Zero iff the simulated ensemble reproduces the observed one.
pub fn objective(
    params: &ModelParams,
    cfg: &SimConfig,
    stats: &ObsStats,
    replications: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if cfg.fleet_size != stats.fleet_size || cfg.num_steps() != stats.ticks {
        return Err(Error::DatasetMismatch(format!(
            "model is {} buses x {} ticks, dataset is {} x {}",
            cfg.fleet_size,
            cfg.num_steps(),
            stats.fleet_size,
            stats.ticks
        )));
    }
    if replications == 0 {
        return Err(Error::Infeasible("at least one replication required".into()));
    }
    let cells = stats.ticks * stats.fleet_size;
    let mut sum = vec![0.0; cells];
    let mut sumsq = vec![0.0; cells];
    for _ in 0..replications {
        let seed: u64 = rng.random();
        let mut i = 0;
        run_with(cfg, params, seed, |state| {
            for b in &state.buses {
                sum[i] += b.position;
                sumsq[i] += b.position * b.position;
                i += 1;
            }
        });
    }
    let k_i = replications as f64;
    let mut total = 0.0;
    for i in 0..cells {
        let sim_mean = sum[i] / k_i;
        let sim_std = if replications > 1 {
            ((sumsq[i] - sum[i] * sum[i] / k_i).max(0.0) / (k_i - 1.0)).sqrt()
        } else {
            0.0
        };
        total += (sim_mean - stats.mean[i]).abs() + (sim_std - stats.std[i]).abs();
    }
    Ok(total / cells as f64)
}

/// A finished calibration: the recovered parameters plus everything needed
/// to audit the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params_star: ModelParams,
    pub pi_star: f64,
    pub state: CemState,
    pub trace: Vec<CemIteration>,
    pub dataset_fingerprint: String,
    pub variant: crate::sim::Variant,
}

/// Calibrate the configured companion variant against a historical dataset.
pub fn calibrate(
    historical: &Dataset,
    sim: &SimConfig,
    cal: &CalibrationConfig,
    seed: u64,
) -> Result<CalibrationResult> {
    cal.validate()?;
    let stats = observed_stats(&historical.runs)?;
    let companion = SimConfig {
        variant: cal.model_variant,
        ..sim.clone()
    };
    if companion.fleet_size != stats.fleet_size || companion.num_steps() != stats.ticks {
        return Err(Error::DatasetMismatch(format!(
            "config is {} buses x {} ticks, dataset {} is {} x {}",
            companion.fleet_size,
            companion.num_steps(),
            historical.fingerprint,
            stats.fleet_size,
            stats.ticks
        )));
    }
    let bounds = ParamBounds::from_config(&companion, cal);
    let opts = CemOptions::from_config(cal);
    let replications = cal.effective_replications();
    let num_stops = companion.num_stops;

    let (state, trace) = cem_optimize(&bounds, &opts, seed, |x, rng| {
        let params = ModelParams::from_flat(x, num_stops).expect("layout fixed by bounds");
        objective(&params, &companion, &stats, replications, rng).unwrap_or(f64::INFINITY)
    })?;

    let params_star = ModelParams::from_flat(&state.best, num_stops)?;
    Ok(CalibrationResult {
        pi_star: state.best_pi,
        params_star,
        trace,
        dataset_fingerprint: historical.fingerprint.clone(),
        variant: cal.model_variant,
        state,
    })
}
