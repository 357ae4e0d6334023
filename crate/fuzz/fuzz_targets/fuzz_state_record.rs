#![no_main]

use libfuzzer_sys::fuzz_target;

// State records are checkpoints that may come from disk; decoding must never
// panic and accepted states must survive a round trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(state) = bustwin::io::parse_state_record(data) {
        let text = bustwin::io::encode_state(&state).expect("re-encode");
        let again = bustwin::io::parse_state_record(text.as_bytes()).expect("re-parse");
        assert_eq!(again, state);
    }
});
