#![no_main]
use hencky::cli::OracleTruth;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(truth) = serde_json::from_slice::<OracleTruth>(data) {
        let _ = truth.oracle.build();
    }
});
