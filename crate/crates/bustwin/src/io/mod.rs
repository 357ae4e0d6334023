//! Persistence and parsing: config files, manifests, trajectory CSVs and
//! state records. Every decoder here accepts untrusted bytes and fails with
//! an error rather than panicking.

mod config_file;
mod manifest;
mod state_record;
mod trajectory_csv;

pub use config_file::{
    load_config, parse_config_bytes, parse_config_str, CalibrationConfig, DatagenConfig,
    ExperimentsConfig, FilterFileConfig, ToolkitConfig,
};
pub use manifest::{
    check_chain, fingerprint_json, geometry_mismatches, load_manifest, parse_manifest,
    write_cem_trace, write_manifest, Artifact, RunManifest, MANIFEST_FILE,
};
pub use state_record::{encode_state, parse_state_record};
pub use trajectory_csv::{
    parse_trajectory_csv, trajectory_to_string, write_trajectory, TRAJECTORY_HEADER,
};
