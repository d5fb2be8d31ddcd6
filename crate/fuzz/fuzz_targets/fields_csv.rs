#![no_main]
use hencky::cli::parse_indexed_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for header in ["tri_id,cx,cy,sigma_x,sigma_y,p_x,p_y,p_norm", "node_id,x,y,u"] {
        if let Ok(rows) = parse_indexed_csv(text, header) {
            let width = header.split(',').count() - 1;
            assert!(rows.iter().all(|r| r.len() == width && r.iter().all(|v| v.is_finite())));
        }
    }
});
