#![no_main]

use libfuzzer_sys::fuzz_target;

// Config parsing must never panic, whatever the bytes; anything it accepts
// must also pass validation a second time.
fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = bustwin::io::parse_config_bytes(data) {
        cfg.validate().expect("accepted config must stay valid");
    }
});
