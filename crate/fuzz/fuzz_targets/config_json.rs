#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_trotter::experiments::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Accepted configs must survive a serialize/parse round trip.
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let again = ExperimentConfig::from_json(&cfg.to_json()).expect("re-parse of serialized config");
        assert_eq!(again, cfg);
    }
});
