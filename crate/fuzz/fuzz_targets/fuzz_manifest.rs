#![no_main]

use libfuzzer_sys::fuzz_target;

// Manifests chain artifacts together; parsing untrusted ones must never
// panic, and an accepted manifest's fingerprint must be recomputable.
fuzz_target!(|data: &[u8]| {
    if let Ok(manifest) = bustwin::io::parse_manifest(data) {
        let _ = manifest.fingerprint();
    }
});
