//! Command-line pipeline: generate synthetic datasets, calibrate, assimilate,
//! run scenarios and reproduce the sensitivity sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use bustwin::calibrate::{calibrate, ParamBounds};
use bustwin::datagen::{
    generate_historical, generate_realtime, sample_params, Dataset, DatasetKind,
    GroundTruthScenario,
};
use bustwin::experiments::{
    run_scenario, sensitivity_sweep, write_detail_csv, write_overlay_csv, write_report_csv,
    ScenarioId,
};
use bustwin::filter::{write_filter_log, write_forecast, FilterConfig};
use bustwin::io::{
    check_chain, geometry_mismatches, load_config, load_manifest, parse_trajectory_csv,
    write_cem_trace, write_manifest, write_trajectory, Artifact, RunManifest, ToolkitConfig,
};
use bustwin::rng::{self, label};
use bustwin::sim::{SimConfig, Trajectory, Variant};

#[derive(Parser)]
#[command(name = "bustwin", version, about = "Bus-route simulation, calibration and assimilation pipeline")]
struct Cli {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic historical + real-time dataset directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate the companion model against a dataset directory.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the particle filter over a dataset's real-time run.
    Assimilate {
        #[arg(long)]
        data: PathBuf,
        /// Calibration directory; omit to filter from sampled parameters.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario for a single grid cell.
    Scenario {
        /// 1 = no calibration, 2 = calibrated, 3 = calibrated + filter,
        /// 4 = filter only.
        #[arg(long)]
        scenario: u8,
        #[arg(long)]
        max_demand: Option<f64>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce the full sensitivity sweep report.
    Sweep {
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => ToolkitConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match cli.command {
        Command::Generate { out } => generate_cmd(&cfg, &out),
        Command::Calibrate { data, out } => calibrate_cmd(&cfg, &data, &out),
        Command::Assimilate {
            data,
            calibration,
            out,
        } => assimilate_cmd(&cfg, &data, calibration.as_deref(), &out),
        Command::Scenario {
            scenario,
            max_demand,
            xi,
            replications,
            out,
        } => scenario_cmd(&cfg, scenario, max_demand, xi, replications, &out),
        Command::Sweep { replications, out } => sweep_cmd(&cfg, replications, &out),
    }
}

fn write_csv_file<F>(path: &Path, write: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> bustwin::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn generate_cmd(cfg: &ToolkitConfig, out: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    std::fs::create_dir_all(out)?;
    let truth_cfg = SimConfig {
        variant: Variant::Truth,
        ..cfg.sim.clone()
    };
    let scenario = GroundTruthScenario::sample(
        truth_cfg,
        cfg.datagen.historical_runs,
        rng::derive_chain(cfg.seed, &[label::DATAGEN]),
    )?;
    let historical = generate_historical(&scenario, cfg.datagen.gps_noise_std_m)?;
    let realtime = generate_realtime(&scenario, cfg.datagen.gps_noise_std_m)?;

    let mut outputs = Vec::new();
    for (k, run) in historical.runs.iter().enumerate() {
        let name = format!("run_{k}.csv");
        write_csv_file(&out.join(&name), |w| write_trajectory(run, w))?;
        outputs.push(name);
    }
    write_csv_file(&out.join("realtime.csv"), |w| {
        write_trajectory(&realtime.runs[0], w)
    })?;
    outputs.push("realtime.csv".into());

    let fingerprint = scenario.fingerprint();
    let manifest = RunManifest {
        command: "generate".into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.seed,
        config: cfg.clone(),
        input_fingerprints: BTreeMap::new(),
        outputs,
        wall_clock_s: started.elapsed().as_secs_f64(),
        artifact: Artifact::Dataset {
            scenario,
            fingerprint: fingerprint.clone(),
            historical_runs: cfg.datagen.historical_runs,
        },
    };
    write_manifest(out, &manifest)?;
    println!(
        "dataset {} ({} historical runs + realtime) -> {}",
        &fingerprint[..12],
        cfg.datagen.historical_runs,
        out.display()
    );
    Ok(())
}

struct LoadedDataset {
    scenario: GroundTruthScenario,
    fingerprint: String,
    historical: Dataset,
    realtime: Trajectory,
}

fn load_dataset(dir: &Path) -> anyhow::Result<LoadedDataset> {
    let manifest = load_manifest(dir).with_context(|| format!("reading dataset manifest in {}", dir.display()))?;
    let (scenario, fingerprint, historical_runs) = match manifest.artifact {
        Artifact::Dataset {
            scenario,
            fingerprint,
            historical_runs,
        } => (scenario, fingerprint, historical_runs),
        _ => bail!("{} does not contain a dataset manifest", dir.display()),
    };
    check_chain(
        &scenario.fingerprint(),
        &fingerprint,
        "dataset manifest self-consistency",
    )?;
    let mut runs = Vec::with_capacity(historical_runs);
    for k in 0..historical_runs {
        let path = dir.join(format!("run_{k}.csv"));
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        runs.push(parse_trajectory_csv(&bytes)?);
    }
    let realtime_bytes = std::fs::read(dir.join("realtime.csv"))?;
    let realtime = parse_trajectory_csv(&realtime_bytes)?;
    Ok(LoadedDataset {
        scenario,
        fingerprint: fingerprint.clone(),
        historical: Dataset {
            kind: DatasetKind::Historical,
            runs,
            fingerprint,
        },
        realtime,
    })
}

fn calibrate_cmd(cfg: &ToolkitConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let dataset = load_dataset(data)?;

    let mismatches = geometry_mismatches(&cfg.sim, &dataset.scenario.sim_config);
    if !mismatches.is_empty() {
        bail!(
            "config geometry does not match dataset {} (differs in: {}); \
             refusing to calibrate against mixed provenance",
            &dataset.fingerprint[..12],
            mismatches.join(", ")
        );
    }

    let result = calibrate(
        &dataset.historical,
        &dataset.scenario.sim_config,
        &cfg.calibration,
        rng::derive_chain(cfg.seed, &[label::CALIBRATION]),
    )?;

    std::fs::create_dir_all(out)?;
    write_csv_file(&out.join("trace.csv"), |w| write_cem_trace(&result.trace, w))?;
    let manifest = RunManifest {
        command: "calibrate".into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.seed,
        config: cfg.clone(),
        input_fingerprints: BTreeMap::from([("dataset".to_string(), dataset.fingerprint.clone())]),
        outputs: vec!["trace.csv".into()],
        wall_clock_s: started.elapsed().as_secs_f64(),
        artifact: Artifact::Calibration {
            dataset_fingerprint: dataset.fingerprint,
            fingerprint: bustwin::io::fingerprint_json(&(&result.params_star, &result.pi_star)),
            variant: result.variant,
            pi_star: result.pi_star,
            params_star: result.params_star.clone(),
            cem: result.state.clone(),
            hyperparams: cfg.calibration.clone(),
        },
    };
    write_manifest(out, &manifest)?;
    println!(
        "calibrated {} in {} iterations, objective {:.3} -> {}",
        result.variant,
        result.state.iterations_run,
        result.pi_star,
        out.display()
    );
    Ok(())
}

fn assimilate_cmd(
    cfg: &ToolkitConfig,
    data: &Path,
    calibration: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let started = Instant::now();
    let dataset = load_dataset(data)?;
    let sim = dataset.scenario.sim_config.clone();

    let mut inputs = BTreeMap::from([("dataset".to_string(), dataset.fingerprint.clone())]);
    let (initial_params, variant, calibration_fingerprint) = match calibration {
        Some(dir) => {
            let manifest = load_manifest(dir)?;
            match manifest.artifact {
                Artifact::Calibration {
                    dataset_fingerprint,
                    fingerprint,
                    variant,
                    params_star,
                    ..
                } => {
                    check_chain(
                        &dataset.fingerprint,
                        &dataset_fingerprint,
                        "calibration was produced from a different dataset",
                    )?;
                    inputs.insert("calibration".to_string(), fingerprint.clone());
                    (params_star, variant, Some(fingerprint))
                }
                _ => bail!("{} does not contain a calibration manifest", dir.display()),
            }
        }
        None => {
            let mut rng = rng::stream(cfg.seed, &[label::FILTER, 99]);
            let params = sample_params(
                sim.min_demand,
                sim.max_demand,
                sim.num_stops,
                sim.initial_traffic_speed,
                &mut rng,
            )?;
            (params, cfg.calibration.model_variant, None)
        }
    };

    let bounds = ParamBounds::from_config(&sim, &cfg.calibration);
    let fc = FilterConfig::from_file(&cfg.filter, variant, &bounds, &sim)?;
    let output = bustwin::filter::run_filter(
        &sim,
        &fc,
        &initial_params,
        &bounds,
        &dataset.realtime,
        rng::derive_chain(cfg.seed, &[label::FILTER]),
    )?;

    std::fs::create_dir_all(out)?;
    let mut outputs = vec!["filter_log.csv".into()];
    write_csv_file(&out.join("filter_log.csv"), |w| {
        write_filter_log(&output, &dataset.realtime, w)
    })?;
    for forecast in &output.forecasts {
        let name = format!("forecast_{}.csv", forecast.issued_at);
        write_csv_file(&out.join(&name), |w| write_forecast(forecast, w))?;
        outputs.push(name);
    }

    let manifest = RunManifest {
        command: "assimilate".into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.seed,
        config: cfg.clone(),
        input_fingerprints: inputs,
        outputs,
        wall_clock_s: started.elapsed().as_secs_f64(),
        artifact: Artifact::FilterRun {
            dataset_fingerprint: dataset.fingerprint,
            calibration_fingerprint,
            assimilation_steps: output.n_eff.len(),
            degenerate_steps: output.degenerate_times.len(),
        },
    };
    write_manifest(out, &manifest)?;
    println!(
        "assimilated {} observation times ({} degenerate) -> {}",
        output.n_eff.len(),
        output.degenerate_times.len(),
        out.display()
    );
    Ok(())
}



fn scenario_cmd(
    cfg: &ToolkitConfig,
    scenario: u8,
    max_demand: Option<f64>,
    xi: Option<f64>,
    replications: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    let started = Instant::now();
    let id = ScenarioId::from_number(scenario)?;
    let max_demand = max_demand.unwrap_or(cfg.experiments.fixed_max_demand_per_min);
    let xi = xi.unwrap_or(cfg.experiments.fixed_xi_pct);
    let replications = replications.unwrap_or(cfg.experiments.replications);

    let values = run_scenario(
        cfg,
        id,
        max_demand,
        xi,
        replications,
        rng::derive_chain(cfg.seed, &[label::SCENARIO]),
    )?;

    std::fs::create_dir_all(out)?;
    write_csv_file(&out.join("rmse.csv"), |w| {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["replication", "rmse_m"])?;
        for (r, v) in values.iter().enumerate() {
            writer.write_record(&[r.to_string(), v.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    })?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let manifest = RunManifest {
        command: "scenario".into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.seed,
        config: cfg.clone(),
        input_fingerprints: BTreeMap::new(),
        outputs: vec!["rmse.csv".into()],
        wall_clock_s: started.elapsed().as_secs_f64(),
        artifact: Artifact::ScenarioRun {
            scenario_id: id.label().to_string(),
            max_demand,
            xi,
            replications,
        },
    };
    write_manifest(out, &manifest)?;
    println!(
        "{} at maxDemand {max_demand}, xi {xi}%: mean RMSE {mean:.1} m over {replications} replications -> {}",
        id.label(),
        out.display()
    );
    Ok(())
}

fn sweep_cmd(cfg: &ToolkitConfig, replications: Option<usize>, out: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(r) = replications {
        cfg.experiments.replications = r;
    }
    let report = sensitivity_sweep(&cfg, rng::derive_chain(cfg.seed, &[label::EXPERIMENTS]))?;

    std::fs::create_dir_all(out)?;
    let mut outputs = vec!["report.csv".into(), "detail.csv".into()];
    write_csv_file(&out.join("report.csv"), |w| write_report_csv(&report, w))?;
    write_csv_file(&out.join("detail.csv"), |w| write_detail_csv(&report, w))?;
    for (label_name, rows) in &report.overlays {
        let name = format!("overlay_{label_name}.csv");
        write_csv_file(&out.join(&name), |w| write_overlay_csv(rows, w))?;
        outputs.push(name);
    }

    let manifest = RunManifest {
        command: "sweep".into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.seed,
        config: cfg.clone(),
        input_fingerprints: BTreeMap::new(),
        outputs,
        wall_clock_s: started.elapsed().as_secs_f64(),
        artifact: Artifact::Report {
            grid_cells: report.rows.len(),
            replications: cfg.experiments.replications,
        },
    };
    write_manifest(out, &manifest)?;

    for row in &report.rows {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.0}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>10} = {:>5}: S1 {:>6}  S2 {:>6}  S3 {:>6}",
            row.parameter,
            row.value,
            fmt(row.rmse_s1),
            fmt(row.rmse_s2),
            fmt(row.rmse_s3)
        );
    }
    if let Some(corr) = report.s1_xi_rank_correlation {
        println!("S1 RMSE vs drift-rate rank correlation: {corr:.3}");
    }
    println!("report -> {}", out.display());
    Ok(())
}



