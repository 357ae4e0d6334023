//! Trajectory CSV: `time_s,bus_id,status,position_m,speed_mps,occupancy`.
//!
//! Rows are ordered by tick then bus id; the first recorded tick is t = dt.
//! Floats are written in Rust's shortest round-trip form so identical runs
//! produce identical bytes.

use std::io::Write;

use crate::error::{Error, Result};
use crate::sim::{BusStatus, Trajectory, TrajectoryRow};

pub const TRAJECTORY_HEADER: [&str; 6] = [
    "time_s",
    "bus_id",
    "status",
    "position_m",
    "speed_mps",
    "occupancy",
];

pub fn write_trajectory<W: Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRAJECTORY_HEADER)?;
    for row in &traj.rows {
        w.write_record(&[
            row.time.to_string(),
            row.bus_id.to_string(),
            row.status.as_str().to_string(),
            row.position.to_string(),
            row.speed.to_string(),
            row.occupancy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_to_string(traj: &Trajectory) -> Result<String> {
    let mut buf = Vec::new();
    write_trajectory(traj, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Malformed(e.to_string()))
}

/// Parse a trajectory CSV. Fleet size and tick length are inferred from the
/// rows; structure is validated. Never panics on malformed input.
pub fn parse_trajectory_csv(bytes: &[u8]) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
    {
        let headers = reader.headers()?;
        if headers.len() != TRAJECTORY_HEADER.len() {
            return Err(Error::Malformed(format!(
                "expected {} columns, found {}",
                TRAJECTORY_HEADER.len(),
                headers.len()
            )));
        }
        for (found, expected) in headers.iter().zip(TRAJECTORY_HEADER) {
            if found != expected {
                return Err(Error::Malformed(format!(
                    "unexpected column {found:?} (expected {expected:?})"
                )));
            }
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::Malformed("short record".into()))
        };
        let parse_f64 = |i: usize| -> Result<f64> {
            field(i)?
                .parse::<f64>()
                .map_err(|e| Error::Malformed(format!("column {}: {e}", TRAJECTORY_HEADER[i])))
        };
        let time = parse_f64(0)?;
        let bus_id: u32 = field(1)?
            .parse()
            .map_err(|e| Error::Malformed(format!("column bus_id: {e}")))?;
        let status = BusStatus::parse(field(2)?)?;
        let position = parse_f64(3)?;
        let speed = parse_f64(4)?;
        let occupancy: u32 = field(5)?
            .parse()
            .map_err(|e| Error::Malformed(format!("column occupancy: {e}")))?;
        rows.push(TrajectoryRow {
            time,
            bus_id,
            status,
            position,
            speed,
            occupancy,
        });
    }
    if rows.is_empty() {
        return Err(Error::Malformed("trajectory has no rows".into()));
    }

    // Fleet size: rows of one tick share a timestamp and carry bus ids 0..N-1.
    if rows[0].bus_id != 0 {
        return Err(Error::Malformed("first row must belong to bus 0".into()));
    }
    let fleet_size = rows
        .iter()
        .skip(1)
        .position(|r| r.bus_id == 0)
        .map(|p| p + 1)
        .unwrap_or(rows.len());
    let dt = rows[0].time;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Malformed("first tick time must be positive".into()));
    }

    let traj = Trajectory {
        fleet_size,
        dt,
        rows,
    };
    traj.validate()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, ModelParams, SimConfig, Variant};

    fn small_run() -> Trajectory {
        let cfg = SimConfig {
            variant: Variant::Deterministic,
            fleet_size: 3,
            num_stops: 4,
            stop_spacing: 800.0,
            horizon: 600.0,
            headway: 120.0,
            ..SimConfig::default()
        };
        let params = ModelParams {
            arrival_rates: vec![0.02; 4],
            departure_rates: vec![0.1, 0.2, 0.3, 1.0],
            traffic_speed: 14.0,
        };
        run(&cfg, &params, 1)
    }

    #[test]
    fn csv_round_trip() {
        let traj = small_run();
        let text = trajectory_to_string(&traj).unwrap();
        let back = parse_trajectory_csv(text.as_bytes()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_trajectory_csv(b"").is_err());
        assert!(parse_trajectory_csv(b"a,b\n1,2\n").is_err());
        let wrong_status = "time_s,bus_id,status,position_m,speed_mps,occupancy\n1,0,FLYING,0,0,0\n";
        assert!(parse_trajectory_csv(wrong_status.as_bytes()).is_err());
        let bad_order = "time_s,bus_id,status,position_m,speed_mps,occupancy\n1,1,IDLE,0,0,0\n";
        assert!(parse_trajectory_csv(bad_order.as_bytes()).is_err());
    }
}
