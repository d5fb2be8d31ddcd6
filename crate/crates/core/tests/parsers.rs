//! Replays the fuzz corpus, plus random mutations of it, through every
//! parser. Nothing may panic; accepted inputs must round-trip.

use hencky::cli::{parse_indexed_csv, OracleTruth, ProblemConfig};
use hencky::mesh::Mesh;
use hencky::oracles::OracleFile;
use hencky::Vec2;
use proptest::prelude::*;
use std::path::PathBuf;

fn corpus(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.iter().map(|p| std::fs::read_to_string(p).unwrap()).collect()
}

fn feed(target: &str, text: &str) {
    match target {
        "problem_config" => {
            if let Ok(cfg) = ProblemConfig::parse(text) {
                let _ = cfg.validate();
            }
        }
        "oracle_file" => {
            if let Ok(file) = OracleFile::parse(text) {
                if let Ok(o) = file.spec.build() {
                    let _ = file.domain(&o);
                    let _ = o.eval(Vec2::new(0.4, 0.3));
                }
            }
        }
        "mesh_dump" => {
            if let Ok(m) = Mesh::from_dump(text, 0.1) {
                let _ = m.triangle_neighbors();
                assert_eq!(Mesh::from_dump(&m.to_dump(), 0.1).unwrap().triangles, m.triangles);
            }
        }
        "fields_csv" => {
            for header in ["tri_id,cx,cy,sigma_x,sigma_y,p_x,p_y,p_norm", "node_id,x,y,u"] {
                if let Ok(rows) = parse_indexed_csv(text, header) {
                    assert!(rows.iter().flatten().all(|v| v.is_finite()));
                }
            }
        }
        "oracle_truth" => {
            if let Ok(t) = serde_json::from_str::<OracleTruth>(text) {
                let _ = t.oracle.build();
            }
        }
        _ => unreachable!(),
    }
}

const TARGETS: [&str; 5] = ["problem_config", "oracle_file", "mesh_dump", "fields_csv", "oracle_truth"];

#[test]
fn corpus_seeds_are_accepted() {
    for s in corpus("problem_config") {
        ProblemConfig::parse(&s).unwrap().validate().unwrap();
    }
    for s in corpus("oracle_file") {
        let f = OracleFile::parse(&s).unwrap();
        f.domain(&f.spec.build().unwrap()).unwrap();
    }
    for s in corpus("mesh_dump") {
        Mesh::from_dump(&s, 0.25).unwrap();
    }
    for s in corpus("oracle_truth") {
        serde_json::from_str::<OracleTruth>(&s).unwrap().oracle.build().unwrap();
    }
    for t in TARGETS {
        corpus(t).iter().for_each(|s| feed(t, s));
    }
}

#[derive(Clone, Debug)]
enum Mutation {
    Truncate(usize),
    Flip(usize, u8),
    Delete(usize, usize),
    Duplicate(usize, usize),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        any::<usize>().prop_map(Mutation::Truncate),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Mutation::Flip(i, b)),
        (any::<usize>(), 1..40usize).prop_map(|(i, n)| Mutation::Delete(i, n)),
        (any::<usize>(), 1..40usize).prop_map(|(i, n)| Mutation::Duplicate(i, n)),
    ]
}

fn apply(text: &str, muts: &[Mutation]) -> String {
    let mut b = text.as_bytes().to_vec();
    for m in muts {
        if b.is_empty() {
            break;
        }
        match *m {
            Mutation::Truncate(i) => b.truncate(i % b.len()),
            Mutation::Flip(i, v) => {
                let k = i % b.len();
                b[k] = v;
            }
            Mutation::Delete(i, n) => {
                let k = i % b.len();
                b.drain(k..(k + n).min(b.len()));
            }
            Mutation::Duplicate(i, n) => {
                let k = i % b.len();
                let piece = b[k..(k + n).min(b.len())].to_vec();
                b.splice(k..k, piece);
            }
        }
    }
    String::from_utf8_lossy(&b).into_owned()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn mutated_inputs_never_panic(t in 0..TARGETS.len(), seed in any::<prop::sample::Index>(), muts in prop::collection::vec(mutation(), 1..6)) {
        let seeds = corpus(TARGETS[t]);
        let text = apply(&seeds[seed.index(seeds.len())], &muts);
        feed(TARGETS[t], &text);
    }
}
