//! Self-describing text records for full model states.
//!
//! Used for particle checkpointing and for restoring a run mid-flight. The
//! encoding is JSON with field names, so records remain readable and
//! versionable; decoding validates structure before handing the state back.

use crate::error::Result;
use crate::sim::StateVector;

/// Encode a state as a self-describing text record.
pub fn encode_state(state: &StateVector) -> Result<String> {
    Ok(serde_json::to_string_pretty(state)?)
}

/// Decode and validate a state record. Never panics on malformed input.
pub fn parse_state_record(bytes: &[u8]) -> Result<StateVector> {
    let state: StateVector = serde_json::from_slice(bytes)?;
    state.validate()?;
    Ok(state)
}
