//! Run manifests: every output directory carries exactly one `manifest.json`
//! describing the command, the config snapshot, the seeds, and the
//! fingerprints of upstream artifacts it was derived from. Downstream
//! commands verify those fingerprints before mixing artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config_file::{CalibrationConfig, ToolkitConfig};
use crate::calibrate::{CemIteration, CemState};
use crate::datagen::GroundTruthScenario;
use crate::error::{Error, Result};
use crate::sim::{ModelParams, Variant};

/// Hex SHA-256 of a value's canonical JSON encoding.
pub fn fingerprint_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    let digest = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub master_seed: u64,
    /// Snapshot of the configuration the command ran with.
    pub config: ToolkitConfig,
    /// Fingerprints of consumed artifacts, keyed by role.
    pub input_fingerprints: BTreeMap<String, String>,
    /// Files written next to this manifest.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub artifact: Artifact,
}

/// What the directory contains.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Dataset {
        scenario: GroundTruthScenario,
        fingerprint: String,
        historical_runs: usize,
    },
    Calibration {
        dataset_fingerprint: String,
        fingerprint: String,
        variant: Variant,
        pi_star: f64,
        params_star: ModelParams,
        cem: CemState,
        hyperparams: CalibrationConfig,
    },
    FilterRun {
        dataset_fingerprint: String,
        calibration_fingerprint: Option<String>,
        assimilation_steps: usize,
        degenerate_steps: usize,
    },
    Report {
        grid_cells: usize,
        replications: usize,
    },
    ScenarioRun {
        scenario_id: String,
        max_demand: f64,
        xi: f64,
        replications: usize,
    },
}

impl RunManifest {
    pub fn fingerprint(&self) -> String {
        fingerprint_json(&self.artifact)
    }
}

/// Decode and structurally validate a manifest. Never panics on malformed
/// input.
pub fn parse_manifest(bytes: &[u8]) -> Result<RunManifest> {
    let manifest: RunManifest = serde_json::from_slice(bytes)?;
    manifest.config.validate()?;
    if let Artifact::Dataset { scenario, .. } = &manifest.artifact {
        scenario.validate()?;
    }
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
    parse_manifest(&bytes)
}

/// PI trace CSV written next to calibration manifests.
pub fn write_cem_trace<W: std::io::Write>(trace: &[CemIteration], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "best_pi", "iter_best_pi", "mean_pi", "max_sigma_frac"])?;
    for row in trace {
        w.write_record(&[
            row.iteration.to_string(),
            row.best_pi.to_string(),
            row.iter_best_pi.to_string(),
            row.mean_pi.to_string(),
            row.max_sigma_frac.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Geometry fields that must agree between a config and the config a dataset
/// was generated with. Returns the offending field names.
pub fn geometry_mismatches(a: &crate::sim::SimConfig, b: &crate::sim::SimConfig) -> Vec<&'static str> {
    let mut bad = Vec::new();
    if a.fleet_size != b.fleet_size {
        bad.push("fleet_size");
    }
    if a.num_stops != b.num_stops {
        bad.push("num_stops");
    }
    if a.stop_spacing != b.stop_spacing {
        bad.push("stop_spacing_m");
    }
    if a.dt != b.dt {
        bad.push("dt_s");
    }
    if a.horizon != b.horizon {
        bad.push("horizon_s");
    }
    if a.headway != b.headway {
        bad.push("headway_s");
    }
    if a.theta != b.theta {
        bad.push("theta");
    }
    if a.geofence != b.geofence {
        bad.push("geofence_m");
    }
    if a.capacity != b.capacity {
        bad.push("capacity");
    }
    if a.acceleration != b.acceleration {
        bad.push("acceleration_mps2");
    }
    if a.initial_traffic_speed != b.initial_traffic_speed {
        bad.push("traffic_speed_mps");
    }
    bad
}

/// Error out unless the two fingerprints chain.
pub fn check_chain(expected: &str, found: &str, context: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::FingerprintMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
            context: context.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConfig;

    #[test]
    fn fingerprints_are_stable_and_distinguish_values() {
        let cfg = SimConfig::default();
        let a = fingerprint_json(&cfg);
        let b = fingerprint_json(&cfg);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        let other = SimConfig {
            fleet_size: 11,
            ..SimConfig::default()
        };
        assert_ne!(a, fingerprint_json(&other));
    }

    #[test]
    fn manifest_round_trip() {
        let scenario = GroundTruthScenario::sample(
            SimConfig {
                fleet_size: 2,
                num_stops: 3,
                horizon: 600.0,
                ..SimConfig::default()
            },
            2,
            1,
        )
        .unwrap();
        let fingerprint = scenario.fingerprint();
        let manifest = RunManifest {
            command: "generate".into(),
            toolkit_version: "test".into(),
            master_seed: 1,
            config: ToolkitConfig::default(),
            input_fingerprints: BTreeMap::new(),
            outputs: vec!["realtime.csv".into()],
            wall_clock_s: 0.1,
            artifact: Artifact::Dataset {
                scenario,
                fingerprint,
                historical_runs: 2,
            },
        };
        let text = serde_json::to_vec(&manifest).unwrap();
        let back = parse_manifest(&text).unwrap();
        assert_eq!(back.command, "generate");
        match back.artifact {
            Artifact::Dataset { historical_runs, .. } => assert_eq!(historical_runs, 2),
            _ => panic!("wrong artifact kind"),
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_manifest(b"").is_err());
        assert!(parse_manifest(b"{\"command\": 3}").is_err());
    }

    #[test]
    fn chain_check() {
        assert!(check_chain("abc", "abc", "x").is_ok());
        let err = check_chain("abc", "def", "calibration vs dataset").unwrap_err();
        assert!(err.to_string().contains("calibration vs dataset"));
    }
}
