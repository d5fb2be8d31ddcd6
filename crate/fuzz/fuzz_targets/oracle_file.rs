#![no_main]
use hencky::oracles::OracleFile;
use hencky::Vec2;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = OracleFile::parse(text) else { return };
    let Ok(oracle) = file.spec.build() else { return };
    let _ = file.domain(&oracle);
    for p in [Vec2::new(0.3, 0.4), Vec2::new(0.5, 0.5), Vec2::new(-1.0, 2.0)] {
        let _ = oracle.eval(p);
    }
});
