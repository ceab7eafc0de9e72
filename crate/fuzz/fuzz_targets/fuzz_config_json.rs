//! Fuzz the JSON run-configuration parser: arbitrary bytes must never
//! panic, only return errors. Accepted configs must also survive the
//! structural validator and re-serialization.

#![no_main]

use libfuzzer_sys::fuzz_target;
use liquidex::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let _ = cfg.validate_structure();
        // A parsed config must round-trip through serialization.
        let json = serde_json::to_string(&cfg).expect("parsed config must serialize");
        let _ = RunConfig::from_json(&json);
    }
});
