#![no_main]

use libfuzzer_sys::fuzz_target;

// CSV decoding of untrusted trajectory files must never panic; accepted
// trajectories must survive an encode/decode round trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(traj) = bustwin::io::parse_trajectory_csv(data) {
        let text = bustwin::io::trajectory_to_string(&traj).expect("re-encode");
        let again = bustwin::io::parse_trajectory_csv(text.as_bytes()).expect("re-parse");
        assert_eq!(again, traj);
    }
});
