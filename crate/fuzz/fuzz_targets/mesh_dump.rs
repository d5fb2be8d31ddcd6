#![no_main]
use hencky::mesh::Mesh;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mesh) = Mesh::from_dump(text, 0.1) {
        let _ = mesh.triangle_neighbors();
        let again = Mesh::from_dump(&mesh.to_dump(), 0.1).expect("dump of a parsed mesh parses");
        assert_eq!(again.triangles, mesh.triangles);
    }
});
